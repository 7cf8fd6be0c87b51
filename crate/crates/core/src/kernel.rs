//! Metadata similarity kernels and the row-normalized weight matrix that
//! spreads each anchor's positive mass over samples with similar metadata.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Bandwidths below this are treated as the σ → 0 limit.
pub const SIGMA_ZERO: f64 = 1e-12;

/// A similarity between two metadata values, maximal (1) on the diagonal.
pub trait Kernel: Send + Sync {
    fn name(&self) -> &'static str;
    fn weight(&self, a: f64, b: f64) -> f64;
}

/// Kernel bandwidth, with `0` and `inf` accepted as limit sentinels.
/// Serialized as a JSON number, or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Sigma(pub f64);

impl Sigma {
    pub const ZERO: Sigma = Sigma(0.0);
    pub const INFINITE: Sigma = Sigma(f64::INFINITY);

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero_limit(self) -> bool {
        self.0 < SIGMA_ZERO
    }

    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }

    pub fn parse(text: &str) -> Result<Sigma> {
        let t = text.trim();
        let v = match t.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => f64::INFINITY,
            _ => t
                .parse::<f64>()
                .map_err(|_| Error::Parameter(format!("invalid sigma '{text}'")))?,
        };
        if v.is_nan() || v < 0.0 {
            return Err(Error::Parameter(format!("sigma must be >= 0 or inf, got '{text}'")));
        }
        Ok(Sigma(v))
    }
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Sigma {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Sigma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct SigmaVisitor;

        impl Visitor<'_> for SigmaVisitor {
            type Value = Sigma;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Sigma, E> {
                if v.is_nan() || v < 0.0 {
                    return Err(E::custom(format!("sigma must be >= 0, got {v}")));
                }
                Ok(Sigma(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Sigma, E> {
                Ok(Sigma(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Sigma, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Sigma, E> {
                Sigma::parse(v).map_err(E::custom)
            }
        }

        d.deserialize_any(SigmaVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub kind: String,
    pub sigma: Sigma,
    pub tolerance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::rbf(5.0)
    }
}

impl KernelConfig {
    pub fn rbf(sigma: f64) -> Self {
        KernelConfig {
            kind: "rbf".into(),
            sigma: Sigma(sigma),
            tolerance: 0.0,
        }
    }

    pub fn delta(tolerance: f64) -> Self {
        KernelConfig {
            kind: "delta".into(),
            sigma: Sigma(1.0),
            tolerance,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Kernel>> {
        registry().build(&self.kind, self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Rbf {
    sigma: f64,
}

impl Rbf {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("rbf sigma must be positive and finite, got {sigma}")));
        }
        Ok(Rbf { sigma })
    }
}

impl Kernel for Rbf {
    fn name(&self) -> &'static str {
        "rbf"
    }

    fn weight(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// 1 when `|a - b| <= tolerance`, else 0.
#[derive(Debug, Clone, Copy)]
pub struct Delta {
    tolerance: f64,
}

impl Delta {
    pub fn new(tolerance: f64) -> Result<Self> {
        if !(tolerance >= 0.0) {
            return Err(Error::Parameter(format!("delta tolerance must be >= 0, got {tolerance}")));
        }
        Ok(Delta { tolerance })
    }
}

impl Kernel for Delta {
    fn name(&self) -> &'static str {
        "delta"
    }

    fn weight(&self, a: f64, b: f64) -> f64 {
        if (a - b).abs() <= self.tolerance {
            1.0
        } else {
            0.0
        }
    }
}

/// The σ → ∞ limit: every pair equally similar.
#[derive(Debug, Clone, Copy)]
pub struct Uniform;

impl Kernel for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn weight(&self, _a: f64, _b: f64) -> f64 {
        1.0
    }
}

fn build_rbf(cfg: &KernelConfig) -> Result<Box<dyn Kernel>> {
    let sigma = cfg.sigma;
    if sigma.is_infinite() {
        Ok(Box::new(Uniform))
    } else if sigma.is_zero_limit() {
        // Exact-duplicate matching; reduces to the identity for distinct y.
        Ok(Box::new(Delta::new(0.0)?))
    } else {
        Ok(Box::new(Rbf::new(sigma.value())?))
    }
}

fn build_delta(cfg: &KernelConfig) -> Result<Box<dyn Kernel>> {
    Ok(Box::new(Delta::new(cfg.tolerance)?))
}

pub type KernelRegistry = Registry<dyn Kernel, KernelConfig>;

pub fn registry() -> KernelRegistry {
    let mut reg = Registry::new("kernel");
    reg.register("rbf", build_rbf).register("delta", build_delta);
    reg
}

pub fn rbf_weight(y1: f64, y2: f64, sigma: f64) -> Result<f64> {
    Ok(Rbf::new(sigma)?.weight(y1, y2))
}

/// Row-stochastic n×n matrix; row `i` is anchor `i`, column `k` candidate `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    /// Row-normalizes raw nonnegative weights. Every row needs positive mass.
    pub fn from_raw(n: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("weight matrix needs {} entries, got {}", n * n, values.len())));
        }
        for (i, row) in values.chunks_mut(n.max(1)).enumerate() {
            if row.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::Validation(format!("row {i} has a negative or non-finite weight")));
            }
            let total: f64 = row.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Validation(format!("row {i} has zero total weight")));
            }
            row.iter_mut().for_each(|w| *w /= total);
        }
        Ok(WeightMatrix { n, values })
    }

    /// Takes weights as given, without normalizing rows.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("weight matrix needs {} entries, got {}", n * n, values.len())));
        }
        if values.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation("weights must be finite and nonnegative".into()));
        }
        Ok(WeightMatrix { n, values })
    }

    pub fn identity(n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        WeightMatrix { n, values }
    }

    pub fn uniform(n: usize) -> Self {
        WeightMatrix {
            n,
            values: vec![1.0 / n as f64; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest absolute deviation of a row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`.
    pub fn blend(&self, other: &WeightMatrix, alpha: f64) -> Result<WeightMatrix> {
        if self.n != other.n {
            return Err(Error::Shape(format!("cannot blend {}x{} with {}x{}", self.n, self.n, other.n, other.n)));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        Ok(WeightMatrix { n: self.n, values })
    }
}

/// Weights from one or more metadata columns, one kernel per column,
/// combined by elementwise product before row normalization.
pub fn weight_matrix(columns: &[&[f64]], kernels: &[KernelConfig]) -> Result<WeightMatrix> {
    if columns.is_empty() {
        return Err(Error::Parameter("at least one metadata column is required".into()));
    }
    if columns.len() != kernels.len() {
        return Err(Error::Parameter(format!(
            "{} metadata columns but {} kernels",
            columns.len(),
            kernels.len()
        )));
    }
    let n = columns[0].len();
    if n == 0 {
        return Err(Error::Parameter("metadata columns are empty".into()));
    }
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(Error::Parameter(format!(
            "metadata columns have mismatched lengths ({} vs {})",
            n,
            c.len()
        )));
    }
    let built = kernels.iter().map(KernelConfig::build).collect::<Result<Vec<_>>>()?;
    let mut raw = vec![1.0; n * n];
    for (col, kernel) in columns.iter().zip(&built) {
        for i in 0..n {
            for k in 0..n {
                raw[i * n + k] *= kernel.weight(col[i], col[k]);
            }
        }
    }
    WeightMatrix::from_raw(n, raw)
}

/// Weights for a single metadata column.
pub fn weight_matrix_1d(y: &[f64], kernel: &KernelConfig) -> Result<WeightMatrix> {
    weight_matrix(&[y], std::slice::from_ref(kernel))
}

/// The σ → 0 (identity over distinct values, uniform over exact
/// duplicates) and σ → ∞ (uniform) limits.
pub fn degenerate_sigma_weights(y: &[f64], sigma: Sigma) -> Result<WeightMatrix> {
    if !(sigma.is_zero_limit() || sigma.is_infinite()) {
        return Err(Error::Parameter(format!(
            "degenerate weights need sigma < {SIGMA_ZERO:e} or inf, got {sigma}"
        )));
    }
    weight_matrix_1d(
        y,
        &KernelConfig {
            kind: "rbf".into(),
            sigma,
            tolerance: 0.0,
        },
    )
}
