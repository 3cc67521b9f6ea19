use std::path::Path;
use std::process::{Command, Output};

use cyclesense::preprocess::{prepare_ride, PreprocessConfig, BUCKET_LEN};
use cyclesense::ride_format::{load_ride, FormatConfig};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyclesense"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Tiny models and schedules so the whole workflow runs in seconds.
const TINY: &str = r#"{
  "synth": { "n_rides": 24, "amplitude_sigma": 10.0, "incident_rate": 1.5 },
  "experiment": {
    "train": { "epochs": 2, "patience": 1, "pretrain_epochs": 1, "pretrain_patience": 0, "learning_rate": 1e-3 },
    "fcn_train": { "epochs": 2, "patience": 1, "augmentation": false, "stacking": false },
    "cyclesense": { "channels": 4, "fusion_convs": 2, "rnn_units": 4, "rnn_layers": 1 },
    "fcn": { "filters": [4, 4, 4] },
    "gan": { "latent": 8, "channels": 4, "steps": 3, "batch_size": 8 }
  },
  "grid": { "f": [5, 10], "rnn_units": [4], "rnn_cell": ["gru"], "learning_rate": [1e-3] },
  "grid_budget": 2,
  "grid_epochs": 1
}"#;

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = cli(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"experiment": {"train": {"epochs": 5, "patience": 9}}}"#).unwrap();
    let out = cli(&["--config", p(&cfg), "gensynth", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(cli(&["--config", p(&cfg), "gensynth", "--out", p(dir.path())]).status.code(), Some(1));
    assert_eq!(cli(&["gensynth", "--partition", "windows-phone"]).status.code(), Some(1));
}

#[test]
fn missing_model_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let ride = dir.path().join("r.csv");
    std::fs::write(&ride, "").unwrap();
    let out = cli(&["detect", "--ride", p(&ride), "--model", p(&dir.path().join("none.ckpt"))]);
    assert_eq!(out.status.code(), Some(2));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = walk(dir)
        .into_iter()
        .map(|f| (f.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&f).unwrap()))
        .collect();
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn full_workflow_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("run.json");
    std::fs::write(&cfg, TINY).unwrap();
    let c = p(&cfg);
    let run = |name: &str| {
        let base = root.path().join(name);
        let rides = base.join("rides");
        let prep = base.join("prep");
        let model = base.join("model");
        let eval = base.join("eval");
        let grid = base.join("grid");
        for (args, what) in [
            (vec!["--config", c, "gensynth", "--out", p(&rides)], "gensynth"),
            (vec!["--config", c, "preprocess", "--data", p(&rides), "--out", p(&prep)], "preprocess"),
            (vec!["--config", c, "train", "--data", p(&prep), "--out", p(&model)], "train"),
            (vec!["--config", c, "evaluate", "--data", p(&prep), "--model", p(&model), "--out", p(&eval)], "evaluate"),
            (vec!["--config", c, "gridsearch", "--data", p(&rides), "--out", p(&grid)], "gridsearch"),
        ] {
            let out = cli(&args);
            assert!(out.status.success(), "{what}: {}", String::from_utf8_lossy(&out.stderr));
        }
        base
    };
    let a = run("a");
    let b = run("b");
    for sub in ["rides", "prep", "model", "eval", "grid"] {
        assert_eq!(files(&a.join(sub)), files(&b.join(sub)), "{sub} differs between runs");
    }

    for f in ["cyclesense.ckpt", "fcn.ckpt", "history.csv", "fcn_history.csv", "config.json", "normalization.json"] {
        assert!(a.join("model").join(f).is_file(), "{f}");
    }
    for f in ["report.csv", "roc_heuristic.csv", "roc_fcn.csv", "roc_cyclesense.csv"] {
        assert!(a.join("eval").join(f).is_file(), "{f}");
    }
    let grid = std::fs::read_to_string(a.join("grid").join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 3);

    let scan = cli(&["scan", "--data", p(&a.join("rides"))]);
    assert!(scan.status.success());
    assert_eq!(String::from_utf8_lossy(&scan.stdout).trim(), "android-new\t24");

    let ride = walk(&a.join("rides")).into_iter().next().unwrap();
    let out = cli(&["detect", "--ride", p(&ride), "--model", p(&a.join("model").join("cyclesense.ckpt"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed = load_ride(&ride, &FormatConfig::default()).unwrap();
    let prepared = prepare_ride(parsed.ride, &PreprocessConfig::default()).unwrap();
    let expected = prepared.uniform.samples.len() / BUCKET_LEN;
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), expected);
    for (i, line) in lines.iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[0], i.to_string());
        let s: f64 = cols[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&s));
    }
}
