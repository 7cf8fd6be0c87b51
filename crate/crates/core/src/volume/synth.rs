//! Deterministic synthetic cohort.
//!
//! Each volume holds a centered sphere whose radius grows linearly with the
//! age-like metadata `y`. Positive-label samples carry an extra off-center
//! gaussian blob. Each site adds its own intensity bias and smoothing, and
//! every voxel receives gaussian noise with standard deviation 0.05.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_manifest, write_volume, LabeledSample, Manifest, Volume};
use crate::augment::filters::gaussian_blur;
use crate::error::{Error, Result};
use crate::rng::{domain, RngStream};

const NOISE_STD: f64 = 0.05;
const RADIUS_MIN_FRACTION: f64 = 0.15;
const RADIUS_MAX_FRACTION: f64 = 0.40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub dim: usize,
    pub y_range: (f64, f64),
    pub n_sites: usize,
    pub site_effect_strength: f64,
    pub class_effect_strength: f64,
    /// How strongly P(label = 1) follows `y`: the probability runs linearly
    /// from `0.5 - c/2` at the bottom of `y_range` to `0.5 + c/2` at the top.
    pub label_y_coupling: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 512,
            dim: 16,
            y_range: (20.0, 80.0),
            n_sites: 4,
            site_effect_strength: 0.5,
            class_effect_strength: 0.5,
            label_y_coupling: 0.8,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_samples == 0 {
            return bad("synth.n_samples must be positive".into());
        }
        if self.dim < 8 {
            return bad(format!("synth.dim must be at least 8, got {}", self.dim));
        }
        let (lo, hi) = self.y_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("synth.y_range must satisfy min < max, got ({lo}, {hi})"));
        }
        if self.n_sites == 0 {
            return bad("synth.n_sites must be positive".into());
        }
        for (name, v) in [
            ("site_effect_strength", self.site_effect_strength),
            ("class_effect_strength", self.class_effect_strength),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("synth.{name} must be nonnegative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.label_y_coupling) {
            return bad(format!(
                "synth.label_y_coupling must lie in [0, 1], got {}",
                self.label_y_coupling
            ));
        }
        Ok(())
    }

    fn radius_for(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        let t = (y - lo) / (hi - lo);
        self.dim as f64 * (RADIUS_MIN_FRACTION + (RADIUS_MAX_FRACTION - RADIUS_MIN_FRACTION) * t)
    }
}

#[derive(Debug, Clone, Copy)]
struct SiteEffect {
    bias: f64,
    blur_sigma: f64,
}

fn site_effects(cfg: &SynthConfig) -> Vec<SiteEffect> {
    (0..cfg.n_sites)
        .map(|k| {
            let mut rng = RngStream::from_key(&[domain::SYNTH_SITE, cfg.seed, k as u64]);
            let bias = cfg.site_effect_strength * 0.1 * rng.normal();
            let blur_sigma = cfg.site_effect_strength * k as f64 / cfg.n_sites as f64;
            SiteEffect { bias, blur_sigma }
        })
        .collect()
}

pub fn site_name(k: usize) -> String {
    format!("site{k}")
}

/// Builds sample `index` in memory. Pure function of `(cfg, index)`.
pub fn synthesize_sample(cfg: &SynthConfig, index: usize) -> (LabeledSample, Volume) {
    let effects = site_effects(cfg);
    synthesize_with(cfg, index, &effects)
}

fn synthesize_with(cfg: &SynthConfig, index: usize, effects: &[SiteEffect]) -> (LabeledSample, Volume) {
    let mut rng = RngStream::from_key(&[domain::SYNTH_SAMPLE, cfg.seed, index as u64]);
    let (lo, hi) = cfg.y_range;
    let y = rng.uniform_in(lo, hi);
    let t = (y - lo) / (hi - lo);
    let p_pos = 0.5 + cfg.label_y_coupling * (t - 0.5);
    let label = u8::from(rng.bernoulli(p_pos));
    let site = index % cfg.n_sites;

    let d = cfg.dim;
    let c = (d as f64 - 1.0) / 2.0;
    let radius = cfg.radius_for(y);
    let blob_center = [0.75 * d as f64, 0.25 * d as f64, 0.5 * d as f64];
    let blob_sigma = d as f64 / 8.0;

    let mut data = Vec::with_capacity(d * d * d);
    for z in 0..d {
        for yy in 0..d {
            for x in 0..d {
                let (fz, fy, fx) = (z as f64, yy as f64, x as f64);
                let r2 = (fz - c).powi(2) + (fy - c).powi(2) + (fx - c).powi(2);
                let mut v = if r2.sqrt() <= radius { 1.0 } else { 0.0 };
                if label == 1 {
                    let b2 = (fz - blob_center[0]).powi(2)
                        + (fy - blob_center[1]).powi(2)
                        + (fx - blob_center[2]).powi(2);
                    v += cfg.class_effect_strength * (-b2 / (2.0 * blob_sigma * blob_sigma)).exp();
                }
                data.push(v);
            }
        }
    }
    let mut vol = Volume::filled([d, d, d], 0.0).with_data(data);

    let effect = effects[site];
    if effect.blur_sigma > 0.0 {
        vol = gaussian_blur(&vol, effect.blur_sigma);
    }
    for v in vol.data_mut() {
        *v += effect.bias + NOISE_STD * rng.normal();
        // Stored as f32; keep the in-memory copy identical to the file.
        *v = *v as f32 as f64;
    }

    let id = format!("s{index:05}");
    let sample = LabeledSample {
        volume_path: format!("volumes/{id}.yvol"),
        id,
        y,
        site: site_name(site),
        label: Some(label),
    };
    (sample, vol)
}

/// Writes `cfg.n_samples` volumes under `out_dir/volumes/` and
/// `out_dir/manifest.jsonl`. Samples are generated in parallel; the output
/// is byte-identical to sequential generation.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let vol_dir = out_dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;

    let effects = site_effects(cfg);
    let samples = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let (sample, vol) = synthesize_with(cfg, i, &effects);
            write_volume(&vol, out_dir.join(&sample.volume_path))?;
            Ok(sample)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest::new(samples, out_dir)?;
    write_manifest(&manifest, out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
