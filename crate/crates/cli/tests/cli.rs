use std::path::{Path, PathBuf};

use yaware_cli::dispatch;

const TINY: &str = r#"{
  "data": {"synth": {"n_samples": 40, "dim": 8, "seed": 3}},
  "model": {"conv_blocks": [{"out_channels": 4, "downsample": 2}, {"out_channels": 8, "downsample": 2}],
            "feature_dim": 8, "projection_hidden": 8, "embedding_dim": 4},
  "train": {"epochs": 2, "batch_size": 16, "base_lr": 0.001},
  "eval": {"probe": {"l2_grid": [0.01]}}
}"#;

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("yaware").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.json" {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn curve(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["epoch", "mean_loss", "lr"]);
    r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect()
}

#[test]
fn gen_data_is_reproducible() {
    let (dir, cfg) = setup();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["gen-data", "--config", s(&cfg), "--out", s(&a), "--seed", "9"]), 0);
    assert_eq!(run(&["gen-data", "--config", s(&cfg), "--out", s(&b), "--seed", "9"]), 0);
    let fa = files(&a);
    assert_eq!(fa.len(), 41);
    assert_eq!(fa, files(&b));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "ok");
    assert_eq!(meta["seed"], 9);
    assert_eq!(meta["config"]["data"]["synth"]["seed"], 9);
    assert!(meta["wall_clock_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn zero_sigma_matches_vanishing_sigma() {
    let (dir, cfg) = setup();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["pretrain", "--config", s(&cfg), "--out", s(&a), "--sigma", "0"]), 0);
    assert_eq!(run(&["pretrain", "--config", s(&cfg), "--out", s(&b), "--sigma", "1e-12"]), 0);
    let (ca, cb) = (curve(&a.join("loss_curve.csv")), curve(&b.join("loss_curve.csv")));
    assert_eq!(ca.len(), 2);
    for (x, y) in ca.iter().zip(&cb) {
        assert!((x - y).abs() <= 1e-9);
    }
    assert!(a.join("checkpoint.yckpt").exists());
}

#[test]
fn ablation_grid_and_plot_data() {
    let (dir, cfg) = setup();
    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, r#"{"sigmas": [0, 5, "inf"], "transform_sets": ["crop", "cutout"]}"#).unwrap();
    let out = dir.path().join("ablate");
    assert_eq!(run(&["ablate-sigma", "--config", s(&cfg), "--grid", s(&grid), "--out", s(&out)]), 0);
    let mut r = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["sigma", "transform_set", "repeat", "fold", "auc", "accuracy"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 30);
    let sigmas: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(sigmas.into_iter().collect::<Vec<_>>(), vec!["0", "5", "inf"]);

    let mut reports: Vec<PathBuf> = std::fs::read_dir(out.join("cells"))
        .unwrap()
        .map(|e| e.unwrap().path().join("report.json"))
        .collect();
    reports.sort();
    let plot = dir.path().join("plot");
    let mut args = vec!["plot-data", "--out", s(&plot), "--reports"];
    args.extend(reports.iter().map(|p| s(p)));
    assert_eq!(run(&args), 0);
    let mut r = csv::Reader::from_path(plot.join("plot_data.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["experiment", "sigma", "transform_set", "n_target", "fold", "auc"]);
    assert_eq!(r.records().count(), 30);

    // Two reports differing only in sigma.
    let rows = yaware_cli::plot_rows(&reports[..1]).unwrap();
    assert_eq!(rows.len(), 5);
    let two = [reports[0].clone(), reports.iter().find(|p| p.to_str().unwrap().contains("sigma-5_crop")).unwrap().clone()];
    let rows = yaware_cli::plot_rows(&two).unwrap();
    assert_eq!(rows.len(), 10);
    let distinct: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.sigma.as_str()).collect();
    assert_eq!(distinct.len(), 2);
}

#[test]
fn probe_and_finetune_write_reports() {
    let (dir, cfg) = setup();
    let pre = dir.path().join("pre");
    assert_eq!(run(&["pretrain", "--config", s(&cfg), "--out", s(&pre)]), 0);
    let ckpt = pre.join("checkpoint.yckpt");
    for cmd in ["probe", "finetune"] {
        let out = dir.path().join(cmd);
        assert_eq!(run(&[cmd, "--config", s(&cfg), "--out", s(&out), "--checkpoint", s(&ckpt)]), 0);
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["folds"].as_array().unwrap().len(), 5);
        assert_eq!(report["experiment"]["sigma"], 5.0);
        assert_eq!(report["experiment"]["transform_set"], "cutout");
        let mean = report["mean_auc"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&mean));
        assert!(out.join("folds.json").exists());
    }
}

#[test]
fn plot_data_rejects_foreign_schema() {
    let (dir, _) = setup();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema_version": 99, "folds": []}"#).unwrap();
    let out = dir.path().join("plot");
    assert_eq!(run(&["plot-data", "--out", s(&out), "--reports", s(&bad)]), 1);
    let meta = std::fs::read_to_string(out.join("run.json")).unwrap();
    assert!(meta.contains("bad.json"));
}

#[test]
fn exit_codes() {
    let (dir, cfg) = setup();
    let out = dir.path().join("x");
    assert_eq!(run(&["no-such-command"]), 1);
    assert_eq!(run(&["pretrain", "--out", s(&out), "--bogus-flag"]), 1);
    assert_eq!(run(&["pretrain", "--config", s(&cfg), "--out", s(&out), "--sigma", "-1"]), 1);
    assert_eq!(run(&["pretrain", "--config", s(&cfg), "--out", s(&out), "--transforms", "rotate"]), 1);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"loss": {"tau": 0.1}}"#).unwrap();
    assert_eq!(run(&["pretrain", "--config", s(&bad), "--out", s(&out)]), 1);
    // A manifest that points at a missing volume file fails validation.
    let manifest = dir.path().join("m.jsonl");
    std::fs::write(&manifest, "{\"id\":\"a\",\"volume_path\":\"nope.yvol\",\"y\":1.0,\"site\":\"s\",\"label\":0}\n").unwrap();
    let cfg2 = dir.path().join("m.json");
    std::fs::write(&cfg2, format!(r#"{{"data": {{"manifest": {:?}}}}}"#, s(&manifest))).unwrap();
    assert_eq!(run(&["probe", "--config", s(&cfg2), "--out", s(&out)]), 1);
    // Malformed checkpoints are rejected as invalid input; unreadable ones are runtime failures.
    let junk = dir.path().join("junk.yckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(run(&["probe", "--config", s(&cfg), "--out", s(&out), "--checkpoint", s(&junk)]), 1);
    let missing = dir.path().join("missing.yckpt");
    assert_eq!(run(&["probe", "--config", s(&cfg), "--out", s(&out), "--checkpoint", s(&missing)]), 2);
}
