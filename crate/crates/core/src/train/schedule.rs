use serde::{Deserialize, Serialize};

use crate::augment::TransformSet;
use crate::error::{Error, Result};
use crate::loss::LossConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub transforms: TransformSet,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 20,
            base_lr: 1e-4,
            lr_decay: 0.9,
            decay_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss: LossConfig::default(),
            transforms: TransformSet::cutout(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.batch_size < 2 {
            return bad(format!("train.batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("train.base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("train.lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.decay_every == 0 {
            return bad("train.decay_every must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("adam eps must be positive".into());
        }
        self.loss.validate()
    }
}

/// `base_lr * lr_decay^floor(epoch / decay_every)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.decay_every) as i32;
    cfg.base_lr * cfg.lr_decay.powi(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 0), 1e-4);
        assert_eq!(lr_at_epoch(&cfg, 9), 1e-4);
        assert!((lr_at_epoch(&cfg, 10) - 9e-5).abs() < 1e-20);
        assert_eq!(lr_at_epoch(&cfg, 25), 8.1e-5);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr_decay: 0.0, ..TrainConfig::default() }.validate().is_err());
    }
}
