//! End-to-end evaluation: the whole encoder is unfrozen and trained with a
//! single-logit head under binary cross-entropy, one fold at a time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamState};
use super::cohort::Cohort;
use super::folds::FoldPlan;
use super::metrics::{accuracy, auc};
use super::report::{EvalReport, ExperimentTag, FoldScore};
use crate::augment::TransformSet;
use crate::error::{Error, Result};
use crate::model::{Classifier, Network};
use crate::rng::{domain, RngStream};
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Reuse these transforms on training volumes; `None` trains on raw volumes.
    pub augment: Option<TransformSet>,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            epochs: 10,
            batch_size: 32,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            augment: None,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("finetune.batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation(format!("finetune.lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits and its gradient.
pub fn bce_with_logits(logits: &[f64], labels: &[u8]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&t, &y)| {
            let y = f64::from(y);
            // log(1 + e^t) - y t, computed stably.
            loss += t.max(0.0) + (-t.abs()).exp().ln_1p() - y * t;
            (sigmoid(t) - y) / n
        })
        .collect();
    (loss / n, grad)
}

fn train_fold(
    init: &Network,
    cohort: &Cohort,
    train: &[usize],
    labels: &[u8],
    cfg: &FineTuneConfig,
    fold: usize,
) -> Result<Classifier> {
    let pipeline = cfg.augment.as_ref().map(|t| t.compile()).transpose()?;
    let mut clf = Classifier::from_network(init, crate::rng::mix(&[cfg.seed, fold as u64]));
    let mut adam = AdamState::new(clf.params(), cfg.beta1, cfg.beta2, cfg.eps);
    for epoch in 0..cfg.epochs {
        let mut order = train.to_vec();
        RngStream::from_key(&[domain::SHUFFLE, cfg.seed, fold as u64, epoch as u64]).shuffle(&mut order);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let vols: Vec<Volume> = match &pipeline {
                Some(p) => batch
                    .par_iter()
                    .map(|&i| {
                        let mut rng = RngStream::from_key(&[domain::AUGMENT, cfg.seed, fold as u64, epoch as u64, i as u64]);
                        p.view(&cohort.volumes[i], &mut rng)
                    })
                    .collect::<Result<_>>()?,
                None => batch.iter().map(|&i| cohort.volumes[i].clone()).collect(),
            };
            let y: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let logits = clf.forward(&vols)?;
            let (loss, grad) = bce_with_logits(&logits, &y);
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    layer: format!("fine-tune loss (fold {fold}, epoch {epoch}, batch {b})"),
                    message: format!("loss is {loss}"),
                });
            }
            clf.backward(&grad)?;
            adam_update(clf.params_mut(), &mut adam, cfg.lr)?;
        }
    }
    Ok(clf)
}

/// Fine-tunes a copy of `init` on every outer fold and scores the test ids.
pub fn fine_tune(init: &Network, cohort: &Cohort, plan: &FoldPlan, cfg: &FineTuneConfig, tag: ExperimentTag) -> Result<EvalReport> {
    cfg.validate()?;
    let mut labels = vec![0u8; cohort.len()];
    for fold in &plan.folds {
        for id in fold.train.iter().chain(&fold.test) {
            let i = cohort.position(id)?;
            labels[i] = cohort.label(i)?;
        }
    }
    let mut scores = Vec::with_capacity(plan.folds.len());
    for fold in &plan.folds {
        let train = cohort.positions(&fold.train)?;
        let test = cohort.positions(&fold.test)?;
        let clf = train_fold(init, cohort, &train, &labels, cfg, fold.index)?;
        let vols: Vec<Volume> = test.iter().map(|&i| cohort.volumes[i].clone()).collect();
        let logits = clf.predict(&vols)?;
        let y: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
        scores.push(FoldScore {
            fold: fold.index,
            auc: auc(&logits, &y)?,
            accuracy: accuracy(&logits, &y),
            n_train: train.len(),
            n_test: test.len(),
        });
    }
    let config = serde_json::json!({ "finetune": cfg, "plan_seed": plan.seed });
    Ok(EvalReport::new("fine_tune", &plan.strategy, tag, scores, config))
}
