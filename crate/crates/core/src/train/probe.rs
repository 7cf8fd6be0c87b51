//! Linear evaluation: a logistic-regression layer on frozen encoder
//! features, with the L2 penalty chosen by inner cross-validation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cohort::Cohort;
use super::folds::{Fold, FoldPlan};
use super::metrics::{accuracy, auc, mean};
use super::report::{EvalReport, ExperimentTag, FoldScore};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Candidate L2 penalties searched on the inner folds.
    pub l2_grid: Vec<f64>,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2_grid: vec![1e-4, 1e-2, 1.0],
            max_iter: 10_000,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl Logistic {
    pub fn logit(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
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

/// Gradient of mean logistic loss plus `l2/2 |w|^2` (bias unpenalized).
fn logistic_grad(x: &Matrix, y: &[u8], w: &[f64], b: f64, l2: f64) -> (Vec<f64>, f64) {
    let n = x.rows() as f64;
    let mut gw: Vec<f64> = w.iter().map(|wi| l2 * wi).collect();
    let mut gb = 0.0;
    for i in 0..x.rows() {
        let row = x.row(i);
        let r = (sigmoid(dot(w, row) + b) - f64::from(y[i])) / n;
        gb += r;
        for (g, v) in gw.iter_mut().zip(row) {
            *g += r * v;
        }
    }
    (gw, gb)
}

/// Largest eigenvalue of `[X 1]^T [X 1] / n` by power iteration.
fn gram_spectral_bound(x: &Matrix) -> f64 {
    let d = x.cols() + 1;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut out = vec![0.0; d];
        for i in 0..x.rows() {
            let row = x.row(i);
            let s = dot(row, &v[..d - 1]) + v[d - 1];
            for (o, r) in out.iter_mut().zip(row) {
                *o += s * r;
            }
            out[d - 1] += s;
        }
        out.iter_mut().for_each(|o| *o /= x.rows() as f64);
        let nrm = dot(&out, &out).sqrt();
        if nrm == 0.0 {
            break;
        }
        lambda = nrm;
        v = out.into_iter().map(|o| o / nrm).collect();
    }
    lambda
}

/// Full-batch accelerated gradient descent on the logistic loss, stopped
/// when the gradient norm drops below `tol` or after `max_iter` steps.
pub fn fit_logistic(x: &Matrix, y: &[u8], l2: f64, max_iter: usize, tol: f64) -> Logistic {
    let d = x.cols();
    let step = 1.0 / (0.25 * gram_spectral_bound(x) + l2).max(1e-12);
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let (mut w_prev, mut b_prev) = (w.clone(), b);
    let mut t = 1.0f64;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..max_iter {
        // Look-ahead point.
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let mom = (t - 1.0) / t_next;
        let yw: Vec<f64> = w.iter().zip(&w_prev).map(|(a, p)| a + mom * (a - p)).collect();
        let yb = b + mom * (b - b_prev);
        let (gw, gb) = logistic_grad(x, y, &yw, yb, l2);
        w_prev = std::mem::replace(&mut w, yw.iter().zip(&gw).map(|(a, g)| a - step * g).collect());
        b_prev = std::mem::replace(&mut b, yb - step * gb);
        t = t_next;
        iterations = it + 1;
        let (cw, cb) = logistic_grad(x, y, &w, b, l2);
        grad_norm = (dot(&cw, &cw) + cb * cb).sqrt();
        if grad_norm < tol {
            break;
        }
    }
    Logistic {
        weights: w,
        bias: b,
        iterations,
        grad_norm,
    }
}

/// Z-scores columns with statistics of the `fit_rows` subset.
#[derive(Debug, Clone)]
pub struct Scaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &Matrix, rows: &[usize]) -> Scaler {
        let d = x.cols();
        let n = rows.len() as f64;
        let mut m = vec![0.0; d];
        for &r in rows {
            m.iter_mut().zip(x.row(r)).for_each(|(a, v)| *a += v / n);
        }
        let mut var = vec![0.0; d];
        for &r in rows {
            var.iter_mut().zip(x.row(r)).zip(&m).for_each(|((a, v), mu)| *a += (v - mu).powi(2) / n);
        }
        let scale = var.into_iter().map(|v| if v > 1e-24 { 1.0 / v.sqrt() } else { 0.0 }).collect();
        Scaler { mean: m, scale }
    }

    pub fn transform(&self, x: &Matrix, rows: &[usize]) -> Matrix {
        let d = x.cols();
        let mut out = Matrix::zeros(rows.len(), d);
        for (o, &r) in rows.iter().enumerate() {
            for (j, v) in x.row(r).iter().enumerate() {
                out.set(o, j, (v - self.mean[j]) * self.scale[j]);
            }
        }
        out
    }
}

/// Fits on `train` rows of `features` and scores `test` rows.
fn fit_and_score(features: &Matrix, labels: &[u8], train: &[usize], test: &[usize], l2: f64, cfg: &ProbeConfig) -> Result<(f64, f64)> {
    let scaler = Scaler::fit(features, train);
    let xtr = scaler.transform(features, train);
    let ytr: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    let model = fit_logistic(&xtr, &ytr, l2, cfg.max_iter, cfg.grad_tol);
    let xte = scaler.transform(features, test);
    let yte: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
    let scores: Vec<f64> = (0..xte.rows()).map(|i| model.logit(xte.row(i))).collect();
    Ok((auc(&scores, &yte)?, accuracy(&scores, &yte)))
}

fn labels_for(cohort: &Cohort, plan: &FoldPlan) -> Result<Vec<u8>> {
    for fold in &plan.folds {
        for id in fold.train.iter().chain(&fold.test) {
            cohort.label(cohort.position(id)?)?;
        }
    }
    Ok(cohort.labels.iter().map(|l| l.unwrap_or(0)).collect())
}

fn select_l2(features: &Matrix, labels: &[u8], cohort: &Cohort, fold: &Fold, cfg: &ProbeConfig) -> Result<f64> {
    if cfg.l2_grid.len() == 1 {
        return Ok(cfg.l2_grid[0]);
    }
    let mut best = (f64::NEG_INFINITY, cfg.l2_grid[0]);
    for &l2 in &cfg.l2_grid {
        let scores = fold
            .inner
            .par_iter()
            .map(|split| {
                let tr = cohort.positions(&split.train)?;
                let va = cohort.positions(&split.val)?;
                fit_and_score(features, labels, &tr, &va, l2, cfg).map(|(a, _)| a)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = mean(&scores);
        if m > best.0 {
            best = (m, l2);
        }
    }
    Ok(best.1)
}

/// Linear probe over precomputed features (one row per cohort sample).
pub fn probe_features(features: &Matrix, cohort: &Cohort, plan: &FoldPlan, cfg: &ProbeConfig, tag: ExperimentTag) -> Result<EvalReport> {
    if cfg.l2_grid.is_empty() || cfg.l2_grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::Validation("probe.l2_grid must hold nonnegative values".into()));
    }
    let labels = labels_for(cohort, plan)?;
    let mut scores = Vec::with_capacity(plan.folds.len());
    for fold in &plan.folds {
        let l2 = select_l2(features, &labels, cohort, fold, cfg)?;
        let train = cohort.positions(&fold.train)?;
        let test = cohort.positions(&fold.test)?;
        let (a, acc) = fit_and_score(features, &labels, &train, &test, l2, cfg)?;
        scores.push(FoldScore {
            fold: fold.index,
            auc: a,
            accuracy: acc,
            n_train: train.len(),
            n_test: test.len(),
        });
    }
    let config = serde_json::json!({ "probe": cfg, "plan_seed": plan.seed });
    Ok(EvalReport::new("linear_probe", &plan.strategy, tag, scores, config))
}

/// Encoder features for every cohort sample, no augmentation.
pub fn extract_features(network: &Network, cohort: &Cohort) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(cohort.len());
    for chunk in cohort.volumes.chunks(64) {
        let f = network.features(chunk)?;
        rows.extend((0..f.rows()).map(|i| f.row(i).to_vec()));
    }
    Matrix::from_rows(&rows)
}

pub fn linear_probe(network: &Network, cohort: &Cohort, plan: &FoldPlan, cfg: &ProbeConfig, tag: ExperimentTag) -> Result<EvalReport> {
    let features = extract_features(network, cohort)?;
    probe_features(&features, cohort, plan, cfg, tag)
}
