use std::path::{Path, PathBuf};

use serde::Serialize;
use yaware_core::augment::TransformSet;
use yaware_core::config::{AblationGrid, ExperimentConfig};
use yaware_core::kernel::Sigma;
use yaware_core::model::{read_checkpoint, write_checkpoint, Network};
use yaware_core::train::{
    curve_csv, fine_tune, linear_probe, make_folds, Cohort, EvalReport, ExperimentTag, FoldPlan, TrainConfig,
    REPORT_SCHEMA_VERSION,
};
use yaware_core::volume::{generate_synthetic_dataset, load_manifest, Manifest};
use yaware_core::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.yckpt";
pub const CURVE_FILE: &str = "loss_curve.csv";
pub const REPORT_FILE: &str = "report.json";
pub const FOLDS_FILE: &str = "folds.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const PLOT_FILE: &str = "plot_data.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Probe,
    FineTune,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    for r in rows {
        w.serialize(r).map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Name of a built-in transform set equal to `set`, else `custom`.
fn transform_set_name(set: &TransformSet) -> String {
    ["crop", "cutout", "all_tf"]
        .into_iter()
        .find(|n| TransformSet::named(n).is_ok_and(|s| &s == set))
        .unwrap_or("custom")
        .to_string()
}

/// The configured manifest, or a synthetic cohort written under `out/data`.
fn manifest_for(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    match &cfg.data.manifest {
        Some(p) => load_manifest(p),
        None => generate_synthetic_dataset(&cfg.synth(), out.join("data")),
    }
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    if cfg.data.manifest.is_some() {
        return Err(Error::Validation("gen-data needs a data.synth section, not a manifest".into()));
    }
    generate_synthetic_dataset(&cfg.synth(), out)?;
    Ok(())
}

fn pretrain_and_save(cfg: &TrainConfig, model: &yaware_core::model::EncoderConfig, cohort: &Cohort, out: &Path) -> Result<Network> {
    let result = yaware_core::train::pretrain(cohort, model, cfg)?;
    write_checkpoint(&result.checkpoint(cfg), out.join(CHECKPOINT_FILE))?;
    write_file(&out.join(CURVE_FILE), curve_csv(&result.curve))?;
    Ok(result.network)
}

pub fn pretrain(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let manifest = manifest_for(cfg, out)?;
    let cohort = Cohort::load(&manifest)?;
    pretrain_and_save(&cfg.train_config(), &cfg.model, &cohort, out)?;
    Ok(())
}

fn run_protocol(protocol: Protocol, cfg: &ExperimentConfig, net: &Network, cohort: &Cohort, plan: &FoldPlan, tag: ExperimentTag) -> Result<EvalReport> {
    match protocol {
        Protocol::Probe => linear_probe(net, cohort, plan, &cfg.eval.probe, tag),
        Protocol::FineTune => fine_tune(net, cohort, plan, &cfg.finetune_config(), tag),
    }
}

pub fn evaluate(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>, protocol: Protocol) -> Result<()> {
    let manifest = manifest_for(cfg, out)?;
    let (net, tag) = match checkpoint {
        Some(p) => {
            let ckpt = read_checkpoint(p)?;
            let train: Option<TrainConfig> = serde_json::from_value(ckpt.header.meta["train"].clone()).ok();
            let tag = ExperimentTag {
                name: "pretrained".into(),
                sigma: train.as_ref().map(|t| t.loss.kernel.sigma),
                transform_set: train.as_ref().map(|t| transform_set_name(&t.transforms)),
                n_target: cfg.eval.n_target,
            };
            (ckpt.network()?, tag)
        }
        None => {
            let tag = ExperimentTag {
                name: "random_init".into(),
                sigma: None,
                transform_set: None,
                n_target: cfg.eval.n_target,
            };
            (Network::new(cfg.model.clone(), cfg.train.seed)?, tag)
        }
    };
    let plan = make_folds(&manifest, &cfg.eval.strategy, cfg.eval.seed, cfg.eval.n_target)?;
    write_json(&out.join(FOLDS_FILE), &plan)?;
    let cohort = Cohort::load(&manifest)?;
    let report = run_protocol(protocol, cfg, &net, &cohort, &plan, tag)?;
    println!("AUC (%) {}", report.auc_cell());
    write_json(&out.join(REPORT_FILE), &report)
}

#[derive(Debug, Serialize)]
struct AblationRow {
    sigma: String,
    transform_set: String,
    repeat: usize,
    fold: usize,
    auc: f64,
    accuracy: f64,
}

pub fn ablate(cfg: &ExperimentConfig, out: &Path, grid: &AblationGrid) -> Result<()> {
    let manifest = manifest_for(cfg, out)?;
    let cohort = Cohort::load(&manifest)?;
    let plan = make_folds(&manifest, &cfg.eval.strategy, cfg.eval.seed, cfg.eval.n_target)?;
    write_json(&out.join(FOLDS_FILE), &plan)?;
    let mut rows = Vec::new();
    for &sigma in &grid.sigmas {
        for set in &grid.transform_sets {
            for repeat in 0..grid.repeats {
                let mut cell = cfg.clone();
                cell.set_sigma(sigma);
                cell.set_transforms(set)?;
                cell.train.seed = cfg.train.seed.wrapping_add(repeat as u64);
                let dir = out.join("cells").join(format!("sigma-{sigma}_{set}_r{repeat}"));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let net = pretrain_and_save(&cell.train_config(), &cell.model, &cohort, &dir)?;
                let tag = ExperimentTag {
                    name: "ablate-sigma".into(),
                    sigma: Some(sigma),
                    transform_set: Some(set.clone()),
                    n_target: cell.eval.n_target,
                };
                let report = linear_probe(&net, &cohort, &plan, &cell.eval.probe, tag)?;
                eprintln!("sigma {sigma} {set} repeat {repeat}: AUC (%) {}", report.auc_cell());
                write_json(&dir.join(REPORT_FILE), &report)?;
                rows.extend(report.folds.iter().map(|f| AblationRow {
                    sigma: sigma.to_string(),
                    transform_set: set.clone(),
                    repeat,
                    fold: f.fold,
                    auc: f.auc,
                    accuracy: f.accuracy,
                }));
            }
        }
    }
    write_csv(&out.join(ABLATION_FILE), &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub experiment: String,
    pub sigma: String,
    pub transform_set: String,
    pub n_target: String,
    pub fold: usize,
    pub auc: f64,
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Validation(format!("{}: {m}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(REPORT_SCHEMA_VERSION) => {}
        other => return Err(bad(format!("report schema version {other:?}, expected {REPORT_SCHEMA_VERSION}"))),
    }
    serde_json::from_value(value).map_err(|e| bad(format!("not an evaluation report: {e}")))
}

/// Long-format rows (one per report fold), in the order given.
pub fn plot_rows(reports: &[PathBuf]) -> Result<Vec<PlotRow>> {
    let mut rows = Vec::new();
    for path in reports {
        let r = read_report(path)?;
        let e = &r.experiment;
        rows.extend(r.folds.iter().map(|f| PlotRow {
            experiment: e.name.clone(),
            sigma: e.sigma.map(|s: Sigma| s.to_string()).unwrap_or_default(),
            transform_set: e.transform_set.clone().unwrap_or_default(),
            n_target: e.n_target.map(|n| n.to_string()).unwrap_or_default(),
            fold: f.fold,
            auc: f.auc,
        }));
    }
    Ok(rows)
}

pub fn plot_data(out: &Path, reports: &[PathBuf]) -> Result<()> {
    let rows = plot_rows(reports)?;
    write_csv(&out.join(PLOT_FILE), &rows)
}
