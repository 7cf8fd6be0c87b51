//! Experiment configuration as read from JSON.
//!
//! Every section and field is optional; missing values take the defaults
//! below and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::TransformSet;
use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, Sigma};
use crate::loss::LossConfig;
use crate::model::EncoderConfig;
use crate::train::{FineTuneConfig, ProbeConfig, TrainConfig};
use crate::volume::SynthConfig;

/// Where the cohort comes from: an existing manifest, or a synthetic
/// cohort generated from `synth` (the default when neither is given).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub objective: String,
    pub temperature: f64,
    pub symmetric: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossConfig::default();
        LossSection {
            objective: d.objective,
            temperature: d.temperature,
            symmetric: d.symmetric,
        }
    }
}

/// Optimizer and schedule settings for pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            batch_size: d.batch_size,
            epochs: d.epochs,
            base_lr: d.base_lr,
            lr_decay: d.lr_decay,
            decay_every: d.decay_every,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// `stratified_nested` or `leave_site_out`.
    pub strategy: String,
    pub n_target: Option<usize>,
    /// Seed for fold assignment.
    pub seed: u64,
    pub probe: ProbeConfig,
    pub finetune: FineTuneConfig,
    /// Fine-tune on augmented views using the experiment's transforms.
    pub finetune_augment: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            strategy: "stratified_nested".into(),
            n_target: None,
            seed: 0,
            probe: ProbeConfig::default(),
            finetune: FineTuneConfig::default(),
            finetune_augment: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub transforms: TransformSet,
    pub kernel: KernelConfig,
    pub loss: LossSection,
    pub model: EncoderConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.manifest.is_some() && self.data.synth.is_some() {
            return Err(Error::Validation("data: give either manifest or synth, not both".into()));
        }
        if let Some(s) = &self.data.synth {
            s.validate()?;
        }
        self.transforms.compile()?;
        self.model.validate()?;
        self.train_config().validate()?;
        crate::train::folds::registry().build(&self.eval.strategy, &())?;
        self.eval.finetune.validate()?;
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        self.data.synth.clone().unwrap_or_default()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            objective: self.loss.objective.clone(),
            temperature: self.loss.temperature,
            kernel: self.kernel.clone(),
            symmetric: self.loss.symmetric,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            base_lr: t.base_lr,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            seed: t.seed,
            loss: self.loss_config(),
            transforms: self.transforms.clone(),
        }
    }

    pub fn finetune_config(&self) -> FineTuneConfig {
        let mut f = self.eval.finetune.clone();
        if self.eval.finetune_augment && f.augment.is_none() {
            f.augment = Some(self.transforms.clone());
        }
        f
    }

    /// Sets the kernel bandwidth, keeping the kernel kind unless it is
    /// `delta`, which has no bandwidth.
    pub fn set_sigma(&mut self, sigma: Sigma) {
        if self.kernel.kind == "delta" {
            self.kernel.kind = "rbf".into();
        }
        self.kernel.sigma = sigma;
    }

    pub fn set_transforms(&mut self, name: &str) -> Result<()> {
        self.transforms = TransformSet::named(name)?;
        Ok(())
    }

    /// Overrides every seed in the document.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.eval.seed = seed;
        self.eval.finetune.seed = seed;
        if let Some(s) = &mut self.data.synth {
            s.seed = seed;
        } else if self.data.manifest.is_none() {
            self.data.synth = Some(SynthConfig { seed, ..SynthConfig::default() });
        }
    }
}

fn default_repeats() -> usize {
    1
}

/// Cells of a bandwidth/augmentation ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub sigmas: Vec<Sigma>,
    pub transform_sets: Vec<String>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

impl AblationGrid {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let grid: AblationGrid =
            serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.transform_sets.is_empty() {
            return Err(Error::Validation("ablation grid needs at least one sigma and one transform set".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Validation("ablation grid repeats must be positive".into()));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(s.0 >= 0.0)) {
            return Err(Error::Validation(format!("ablation sigma {s} is negative")));
        }
        for name in &self.transform_sets {
            TransformSet::named(name)?;
        }
        Ok(())
    }
}
