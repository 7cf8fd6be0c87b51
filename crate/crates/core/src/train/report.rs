use serde::{Deserialize, Serialize};

use super::metrics::{mean, sample_std};
use crate::kernel::Sigma;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Labels a report for merging into plot data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentTag {
    pub name: String,
    pub sigma: Option<Sigma>,
    pub transform_set: Option<String>,
    pub n_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldScore {
    pub fold: usize,
    pub auc: f64,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub schema_version: u32,
    /// `linear_probe` or `fine_tune`.
    pub protocol: String,
    pub strategy: String,
    pub experiment: ExperimentTag,
    pub folds: Vec<FoldScore>,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(protocol: &str, strategy: &str, experiment: ExperimentTag, folds: Vec<FoldScore>, config: serde_json::Value) -> Self {
        let aucs: Vec<f64> = folds.iter().map(|f| f.auc).collect();
        let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            protocol: protocol.into(),
            strategy: strategy.into(),
            experiment,
            mean_auc: mean(&aucs),
            std_auc: sample_std(&aucs),
            mean_accuracy: mean(&accs),
            std_accuracy: sample_std(&accs),
            folds,
            config,
        }
    }

    /// AUC in percent as `mean ± std`, e.g. `76.33 ± 2.3`.
    pub fn auc_cell(&self) -> String {
        format!("{:.2} ± {:.1}", 100.0 * self.mean_auc, 100.0 * self.std_auc)
    }
}
