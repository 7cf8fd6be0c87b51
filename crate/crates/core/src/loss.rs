//! InfoNCE, its metadata-weighted generalization and the discrete
//! (supervised-contrastive) special case, each with analytic gradients
//! with respect to both embedding matrices.
//!
//! For anchor `i` (row `i` of `z1`) and scaled similarities
//! `S[i][j] = z1_i . z2_j / tau`, the weighted loss is
//!
//! ```text
//! L_i = -sum_k W[i][k] * (S[i][k] - log((1/n) * sum_j exp(S[i][j])))
//! ```
//!
//! averaged over anchors. InfoNCE is the case `W = I`. The `1/n` inside
//! the log is kept, so values can be negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{weight_matrix_1d, KernelConfig, WeightMatrix};
use crate::linalg::{dot, Matrix};
use crate::registry::Registry;

/// Allowed deviation of a weight-matrix row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Registered objective name: `y_aware`, `infonce` or `supcon`.
    pub objective: String,
    pub temperature: f64,
    pub kernel: KernelConfig,
    pub symmetric: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            objective: "y_aware".into(),
            temperature: 0.1,
            kernel: KernelConfig::default(),
            symmetric: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Validation(format!(
                "loss.temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn ContrastiveObjective>> {
        self.validate()?;
        registry().build(&self.objective, self)
    }
}

/// Scaled cosine similarities between first views (rows) and second views
/// (columns). Keeps the embeddings it was built from for the chain rule.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    values: Matrix,
    tau: f64,
    z1: Matrix,
    z2: Matrix,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn temperature(&self) -> f64 {
        self.tau
    }

    /// Similarities with the roles of the two views swapped.
    pub fn transposed(&self) -> SimilarityMatrix {
        SimilarityMatrix {
            values: self.values.transpose(),
            tau: self.tau,
            z1: self.z2.clone(),
            z2: self.z1.clone(),
        }
    }
}

pub fn similarity_matrix(z1: &Matrix, z2: &Matrix, tau: f64) -> Result<SimilarityMatrix> {
    if z1.shape() != z2.shape() {
        return Err(Error::Shape(format!(
            "view embeddings differ in shape: {:?} vs {:?}",
            z1.shape(),
            z2.shape()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let n = z1.rows();
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            values.set(i, j, dot(z1.row(i), z2.row(j)) / tau);
        }
    }
    Ok(SimilarityMatrix {
        values,
        tau,
        z1: z1.clone(),
        z2: z2.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub grad_z1: Matrix,
    pub grad_z2: Matrix,
}

impl LossResult {
    fn averaged(a: LossResult, b: LossResult) -> LossResult {
        // b was computed with the views swapped.
        let mut grad_z1 = a.grad_z1;
        grad_z1.add_assign(&b.grad_z2);
        grad_z1.scale(0.5);
        let mut grad_z2 = a.grad_z2;
        grad_z2.add_assign(&b.grad_z1);
        grad_z2.scale(0.5);
        LossResult {
            value: 0.5 * (a.value + b.value),
            grad_z1,
            grad_z2,
        }
    }
}

/// Per-row `log sum_j exp(S[i][j])` and softmax, via max subtraction.
fn row_log_softmax(s: &Matrix, i: usize) -> (f64, Vec<f64>) {
    let row = s.row(i);
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let lse = m + total.ln();
    let softmax = exps.into_iter().map(|e| e / total).collect();
    (lse, softmax)
}

/// Chains `dL/dS` through `S = z1 z2^T / tau`.
fn chain(sim: &SimilarityMatrix, grad_s: &Matrix) -> Result<(Matrix, Matrix)> {
    let mut g1 = grad_s.matmul(&sim.z2)?;
    g1.scale(1.0 / sim.tau);
    let mut g2 = grad_s.transpose().matmul(&sim.z1)?;
    g2.scale(1.0 / sim.tau);
    Ok((g1, g2))
}

fn finish(sim: &SimilarityMatrix, value: f64, grad_s: Matrix) -> Result<LossResult> {
    let (grad_z1, grad_z2) = chain(sim, &grad_s)?;
    if !value.is_finite() || !grad_z1.is_finite() || !grad_z2.is_finite() {
        return Err(Error::Numeric {
            layer: "contrastive loss".into(),
            message: format!("non-finite loss or gradient (value {value})"),
        });
    }
    Ok(LossResult {
        value,
        grad_z1,
        grad_z2,
    })
}

/// InfoNCE with the positive on the diagonal.
pub fn infonce(sim: &SimilarityMatrix) -> Result<LossResult> {
    let n = sim.n();
    let ln_n = (n as f64).ln();
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad_s = Matrix::zeros(n, n);
    for i in 0..n {
        let (lse, softmax) = row_log_softmax(&sim.values, i);
        value += lse - ln_n - sim.get(i, i);
        let g = grad_s.row_mut(i);
        for (gj, p) in g.iter_mut().zip(&softmax) {
            *gj = p * inv_n;
        }
        g[i] -= inv_n;
    }
    finish(sim, value * inv_n, grad_s)
}

/// The kernel-weighted InfoNCE. `w` must be row-stochastic.
pub fn y_aware_infonce(sim: &SimilarityMatrix, w: &WeightMatrix) -> Result<LossResult> {
    let n = sim.n();
    if w.n() != n {
        return Err(Error::Shape(format!("weights are {0}x{0} but similarities are {1}x{1}", w.n(), n)));
    }
    for i in 0..n {
        let s: f64 = w.row(i).iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Validation(format!("weight row {i} sums to {s}, not 1")));
        }
    }
    let ln_n = (n as f64).ln();
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad_s = Matrix::zeros(n, n);
    for i in 0..n {
        let (lse, softmax) = row_log_softmax(&sim.values, i);
        let weights = w.row(i);
        let mass: f64 = weights.iter().sum();
        value += mass * (lse - ln_n) - dot(weights, sim.values.row(i));
        for (k, g) in grad_s.row_mut(i).iter_mut().enumerate() {
            *g = inv_n * (mass * softmax[k] - weights[k]);
        }
    }
    finish(sim, value * inv_n, grad_s)
}

/// Weighted loss with uniform positives over equal category codes.
pub fn supcon_discrete(sim: &SimilarityMatrix, labels: &[f64]) -> Result<LossResult> {
    if labels.len() != sim.n() {
        return Err(Error::Shape(format!("{} labels for {} anchors", labels.len(), sim.n())));
    }
    let w = weight_matrix_1d(labels, &KernelConfig::delta(0.0))?;
    y_aware_infonce(sim, &w)
}

/// A batch objective over two views and per-sample metadata.
pub trait ContrastiveObjective: Send + Sync {
    fn name(&self) -> &'static str;

    /// Loss for one direction: rows of `z1` are the anchors.
    fn directed(&self, sim: &SimilarityMatrix, y: &[f64]) -> Result<LossResult>;

    fn temperature(&self) -> f64;

    fn symmetric(&self) -> bool;

    fn evaluate(&self, z1: &Matrix, z2: &Matrix, y: &[f64]) -> Result<LossResult> {
        if y.len() != z1.rows() {
            return Err(Error::Shape(format!("{} metadata values for {} samples", y.len(), z1.rows())));
        }
        let sim = similarity_matrix(z1, z2, self.temperature())?;
        let forward = self.directed(&sim, y)?;
        if !self.symmetric() {
            return Ok(forward);
        }
        let backward = self.directed(&sim.transposed(), y)?;
        Ok(LossResult::averaged(forward, backward))
    }
}

#[derive(Debug, Clone)]
pub struct InfoNce {
    pub temperature: f64,
    pub symmetric: bool,
}

impl ContrastiveObjective for InfoNce {
    fn name(&self) -> &'static str {
        "infonce"
    }

    fn directed(&self, sim: &SimilarityMatrix, _y: &[f64]) -> Result<LossResult> {
        infonce(sim)
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn symmetric(&self) -> bool {
        self.symmetric
    }
}

#[derive(Debug, Clone)]
pub struct YAware {
    pub temperature: f64,
    pub kernel: KernelConfig,
    pub symmetric: bool,
}

impl ContrastiveObjective for YAware {
    fn name(&self) -> &'static str {
        "y_aware"
    }

    fn directed(&self, sim: &SimilarityMatrix, y: &[f64]) -> Result<LossResult> {
        let w = weight_matrix_1d(y, &self.kernel)?;
        y_aware_infonce(sim, &w)
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn symmetric(&self) -> bool {
        self.symmetric
    }
}

/// Treats `y` as category codes compared exactly.
#[derive(Debug, Clone)]
pub struct SupCon {
    pub temperature: f64,
    pub symmetric: bool,
}

impl ContrastiveObjective for SupCon {
    fn name(&self) -> &'static str {
        "supcon"
    }

    fn directed(&self, sim: &SimilarityMatrix, y: &[f64]) -> Result<LossResult> {
        supcon_discrete(sim, y)
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn symmetric(&self) -> bool {
        self.symmetric
    }
}

pub type ObjectiveRegistry = Registry<dyn ContrastiveObjective, LossConfig>;

pub fn registry() -> ObjectiveRegistry {
    let mut reg: ObjectiveRegistry = Registry::new("objective");
    reg.register("infonce", |c| {
        Ok(Box::new(InfoNce {
            temperature: c.temperature,
            symmetric: c.symmetric,
        }))
    })
    .register("y_aware", |c| {
        c.kernel.build()?;
        Ok(Box::new(YAware {
            temperature: c.temperature,
            kernel: c.kernel.clone(),
            symmetric: c.symmetric,
        }))
    })
    .register("supcon", |c| {
        Ok(Box::new(SupCon {
            temperature: c.temperature,
            symmetric: c.symmetric,
        }))
    });
    reg
}
