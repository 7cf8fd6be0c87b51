use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use yaware_core::config::ExperimentConfig;
use yaware_core::kernel::Sigma;
use yaware_core::{Error, Result};

use crate::CommonArgs;

pub const RUN_FILE: &str = "run.json";

/// Applies `YAWARE_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<()> {
    let Ok(text) = std::env::var("YAWARE_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Validation(format!("YAWARE_THREADS must be a positive integer, got '{text}'")))?;
    // A pool may already exist when dispatch runs more than once in a process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Reads the configuration and applies command-line overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &args.sigma {
        cfg.set_sigma(Sigma::parse(s)?);
    }
    if let Some(t) = &args.transforms {
        cfg.set_transforms(t)?;
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_run_file(out: &Path, mut meta: Value, started: SystemTime, clock: Instant, result: &Result<()>) -> Result<()> {
    meta["versions"] = json!({
        "yaware": env!("CARGO_PKG_VERSION"),
        "checkpoint_schema": yaware_core::model::CHECKPOINT_SCHEMA_VERSION,
        "report_schema": yaware_core::train::REPORT_SCHEMA_VERSION,
        "manifest_schema": yaware_core::volume::MANIFEST_SCHEMA_VERSION,
    });
    meta["started_unix_s"] = json!(started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0));
    meta["wall_clock_s"] = json!(clock.elapsed().as_secs_f64());
    meta["status"] = match result {
        Ok(()) => json!("ok"),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let path = out.join(RUN_FILE);
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn with_metadata<F>(command: &str, args: &CommonArgs, extra: Option<Value>, f: F) -> Result<()>
where
    F: FnOnce(&ExperimentConfig, &Path) -> Result<()>,
{
    let started = SystemTime::now();
    let clock = Instant::now();
    create_out(&args.out)?;
    let cfg = resolve_config(args);
    let mut meta = json!({
        "command": command,
        "config_path": args.config,
        "overrides": { "seed": args.seed, "sigma": args.sigma, "transforms": args.transforms },
        "config": cfg.as_ref().ok(),
        "seed": cfg.as_ref().ok().map(|c| c.train.seed),
    });
    if let Some(Value::Object(m)) = extra {
        for (k, v) in m {
            meta[k] = v;
        }
    }
    let result = cfg.and_then(|c| f(&c, &args.out));
    write_run_file(&args.out, meta, started, clock, &result)?;
    result
}

pub fn plot_with_metadata(out: &Path, reports: &[PathBuf]) -> Result<()> {
    let started = SystemTime::now();
    let clock = Instant::now();
    create_out(out)?;
    let meta = json!({ "command": "plot-data", "reports": reports, "config": null, "seed": null });
    let result = crate::commands::plot_data(out, reports);
    write_run_file(out, meta, started, clock, &result)?;
    result
}
