use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{read_volume, Manifest, Volume};

/// A manifest's volumes in memory, standardized per volume.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub ids: Vec<String>,
    pub volumes: Vec<Volume>,
    pub y: Vec<f64>,
    pub labels: Vec<Option<u8>>,
    pub sites: Vec<String>,
    index: HashMap<String, usize>,
}

impl Cohort {
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let volumes = manifest
            .samples
            .par_iter()
            .map(|s| read_volume(manifest.volume_path(s)).map(|v| v.standardized()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(
            manifest.samples.iter().map(|s| s.id.clone()).collect(),
            volumes,
            manifest.samples.iter().map(|s| s.y).collect(),
            manifest.samples.iter().map(|s| s.label).collect(),
            manifest.samples.iter().map(|s| s.site.clone()).collect(),
        )
    }

    /// Volumes are taken as given (callers standardize).
    pub fn from_parts(
        ids: Vec<String>,
        volumes: Vec<Volume>,
        y: Vec<f64>,
        labels: Vec<Option<u8>>,
        sites: Vec<String>,
    ) -> Result<Self> {
        let n = ids.len();
        if [volumes.len(), y.len(), labels.len(), sites.len()].iter().any(|&l| l != n) {
            return Err(Error::Shape("cohort columns have different lengths".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("sample '{}' has non-finite y", ids[i])));
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Cohort {
            ids,
            volumes,
            y,
            labels,
            sites,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("id '{id}' is not in the cohort")))
    }

    pub fn positions(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter().map(|id| self.position(id)).collect()
    }

    pub fn label(&self, i: usize) -> Result<u8> {
        self.labels[i].ok_or_else(|| Error::Validation(format!("sample '{}' has no label", self.ids[i])))
    }
}
