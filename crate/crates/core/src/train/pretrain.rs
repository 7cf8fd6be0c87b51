use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamState};
use super::cohort::Cohort;
use super::schedule::{lr_at_epoch, TrainConfig};
use crate::augment::sample_view_pair;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Checkpoint, EncoderConfig, Network};
use crate::rng::{domain, RngStream};
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub network: Network,
    pub curve: Vec<EpochRecord>,
}

impl PretrainResult {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let meta = serde_json::json!({ "train": cfg, "loss_curve": self.curve });
        Checkpoint::new(&self.network, self.curve.len(), cfg.seed, meta)
    }
}

/// Sample order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::from_key(&[domain::SHUFFLE, seed, epoch as u64]).shuffle(&mut order);
    order
}

/// Contrastive pretraining on standardized volumes with metadata `y`.
/// Batches smaller than two samples are skipped.
pub fn pretrain_volumes(volumes: &[Volume], y: &[f64], model: &EncoderConfig, cfg: &TrainConfig) -> Result<PretrainResult> {
    cfg.validate()?;
    if volumes.len() != y.len() {
        return Err(Error::Validation(format!("{} volumes but {} metadata values", volumes.len(), y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("sample {i} has non-finite metadata")));
    }
    let objective = cfg.loss.build()?;
    let pipeline = cfg.transforms.compile()?;
    let mut network = Network::new(model.clone(), cfg.seed)?;
    let mut adam = AdamState::new(network.params(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        let order = epoch_order(volumes.len(), cfg.seed, epoch);
        let mut losses = Vec::new();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let pairs = batch
                .par_iter()
                .map(|&i| {
                    let mut r1 = RngStream::for_view(cfg.seed, i as u64, epoch as u64, 0);
                    let mut r2 = RngStream::for_view(cfg.seed, i as u64, epoch as u64, 1);
                    sample_view_pair(&volumes[i], &pipeline, &mut r1, &mut r2)
                })
                .collect::<Result<Vec<_>>>()?;
            let n = batch.len();
            let (first, second): (Vec<Volume>, Vec<Volume>) = pairs.into_iter().unzip();
            let views: Vec<Volume> = first.into_iter().chain(second).collect();
            let z = network.embed(&views)?;
            let d = z.cols();
            let z1 = Matrix::from_vec(n, d, z.data()[..n * d].to_vec())?;
            let z2 = Matrix::from_vec(n, d, z.data()[n * d..].to_vec())?;
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let res = objective.evaluate(&z1, &z2, &yb).map_err(|e| Error::Numeric {
                layer: format!("loss (epoch {epoch}, batch {b})"),
                message: e.to_string(),
            })?;
            if !res.value.is_finite() {
                return Err(Error::Numeric {
                    layer: format!("loss (epoch {epoch}, batch {b})"),
                    message: format!("loss is {}", res.value),
                });
            }
            let mut upstream = res.grad_z1.data().to_vec();
            upstream.extend_from_slice(res.grad_z2.data());
            network.backward(&Matrix::from_vec(2 * n, d, upstream)?)?;
            adam_update(network.params_mut(), &mut adam, lr)?;
            losses.push(res.value);
        }
        let mean_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        curve.push(EpochRecord { epoch, mean_loss, lr });
    }
    Ok(PretrainResult { network, curve })
}

pub fn pretrain(cohort: &Cohort, model: &EncoderConfig, cfg: &TrainConfig) -> Result<PretrainResult> {
    pretrain_volumes(&cohort.volumes, &cohort.y, model, cfg)
}

/// Loss curve as CSV with header `epoch,mean_loss,lr`.
pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,mean_loss,lr\n");
    for r in curve {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.mean_loss, r.lr));
    }
    out
}
