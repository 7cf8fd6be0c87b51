//! Volumes, the on-disk container, manifests and the synthetic generator.

mod io;
mod manifest;
pub mod synth;

pub use io::{read_volume, write_volume, MAGIC};
pub use manifest::{load_manifest, write_manifest, LabeledSample, Manifest, MANIFEST_SCHEMA_VERSION};
pub use synth::{generate_synthetic_dataset, SynthConfig};

use crate::error::{Error, Result};

/// A 3D scalar field stored in C order (z slowest, x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Validation(format!("volume dims must be positive, got {dims:?}")));
        }
        if spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Validation(format!(
                "volume spacing must be positive, got {spacing_mm:?}"
            )));
        }
        let n = dims.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::Validation(format!(
                "volume data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                n
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite voxel value at index {i}")));
        }
        Ok(Volume {
            dims,
            spacing_mm,
            data,
        })
    }

    /// Constant-filled volume with unit spacing.
    pub fn filled(dims: [usize; 3], value: f64) -> Self {
        let n = dims.iter().product();
        Volume {
            dims,
            spacing_mm: [1.0; 3],
            data: vec![value; n],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(z, y, x)]
    }

    /// Same geometry, new voxel values. Used by transforms that build a
    /// fresh buffer.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Volume {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64;
        var.sqrt()
    }

    /// Zero mean, unit variance per volume. A constant volume becomes all
    /// zeros.
    pub fn standardized(&self) -> Volume {
        let m = self.mean();
        let s = self.std();
        let data = if s > 0.0 {
            self.data.iter().map(|v| (v - m) / s).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        self.with_data(data)
    }
}
