//! Optimization, pretraining, and evaluation protocols.

pub mod adam;
pub mod cohort;
pub mod finetune;
pub mod folds;
pub mod metrics;
pub mod pretrain;
pub mod probe;
pub mod report;
pub mod schedule;

pub use adam::{adam_update, AdamState};
pub use cohort::Cohort;
pub use finetune::{bce_with_logits, fine_tune, FineTuneConfig};
pub use folds::{fold_items, make_folds, make_folds_for, Fold, FoldItem, FoldPlan, FoldStrategy, InnerSplit};
pub use metrics::{accuracy, auc, average_ranks, mean, pearson, sample_std, spearman};
pub use pretrain::{curve_csv, epoch_order, pretrain, pretrain_volumes, EpochRecord, PretrainResult};
pub use probe::{extract_features, fit_logistic, linear_probe, probe_features, Logistic, ProbeConfig};
pub use report::{EvalReport, ExperimentTag, FoldScore, REPORT_SCHEMA_VERSION};
pub use schedule::{lr_at_epoch, TrainConfig};
