//! The `yaware` command line.
//!
//! Every subcommand writes its outputs, plus a `run.json` describing the
//! invocation, under `--out`. Exit status is 0 on success, 1 for usage or
//! validation errors and 2 for runtime failures.

mod commands;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::plot_rows;

#[derive(Debug, Parser)]
#[command(name = "yaware", version, about = "Kernel-weighted contrastive pretraining for 3D volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cohort (volumes and manifest).
    GenData(CommonArgs),
    /// Contrastive pretraining; writes a checkpoint and loss curve.
    Pretrain(CommonArgs),
    /// Linear probe on frozen encoder features.
    Probe(EvalArgs),
    /// Fine-tune the whole encoder with a classification head.
    Finetune(EvalArgs),
    /// Pretrain and probe over a grid of bandwidths and transform sets.
    AblateSigma(AblateArgs),
    /// Merge evaluation reports into one long-format CSV.
    PlotData(PlotArgs),
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Kernel bandwidth; `0` and `inf` select the degenerate kernels.
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<String>,
    /// Named transform set: crop, cutout or all_tf.
    #[arg(long)]
    transforms: Option<String>,
}

#[derive(Debug, Clone, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Pretrained checkpoint; a randomly initialized encoder is used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Ablation grid (JSON with sigmas, transform_sets, repeats).
    #[arg(long)]
    grid: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct PlotArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Report JSON files to merge.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
}

/// Runs one command line and returns the process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = run::configure_threads() {
        eprintln!("error: {e}");
        return 1;
    }
    let result = match cli.command {
        Command::GenData(a) => run::with_metadata("gen-data", &a, None, commands::gen_data),
        Command::Pretrain(a) => run::with_metadata("pretrain", &a, None, commands::pretrain),
        Command::Probe(a) => {
            let extra = serde_json::json!({ "checkpoint": a.checkpoint });
            run::with_metadata("probe", &a.common, Some(extra), |cfg, out| {
                commands::evaluate(cfg, out, a.checkpoint.as_deref(), commands::Protocol::Probe)
            })
        }
        Command::Finetune(a) => {
            let extra = serde_json::json!({ "checkpoint": a.checkpoint });
            run::with_metadata("finetune", &a.common, Some(extra), |cfg, out| {
                commands::evaluate(cfg, out, a.checkpoint.as_deref(), commands::Protocol::FineTune)
            })
        }
        Command::AblateSigma(a) => match yaware_core::config::AblationGrid::load(&a.grid) {
            Ok(grid) => {
                let extra = serde_json::json!({ "grid": grid });
                run::with_metadata("ablate-sigma", &a.common, Some(extra), |cfg, out| commands::ablate(cfg, out, &grid))
            }
            Err(e) => Err(e),
        },
        Command::PlotData(a) => run::plot_with_metadata(&a.out, &a.reports),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
