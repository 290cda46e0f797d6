use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drive_core::bench::{read_table, AGGREGATE_ROW};
use drive_core::config::{RunConfig, DESK_PRESET};
use drive_core::pipeline::{sha256_file, Manifest};

fn drive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drive"))
        .args(args)
        .env_remove("DRIVE_OUT")
        .output()
        .expect("spawn drive")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Desk settings shrunk to a few seconds per stage.
fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::parse(DESK_PRESET).unwrap();
    cfg.pretrain.frames = 8;
    cfg.pretrain.holdout_frames = 4;
    cfg.pretrain.steps = 6;
    cfg.pretrain.batch = 4;
    cfg.train.epochs = 2;
    cfg.dagger.epochs = 1;
    cfg.dagger.rounds = 1;
    for suite in [
        &mut cfg.suite.collect,
        &mut cfg.suite.holdout,
        &mut cfg.suite.evaluate,
        &mut cfg.suite.bench,
        &mut cfg.suite.ablation,
    ] {
        suite.kinds.truncate(1);
        suite.count = 1;
    }
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn run_ok(args: &[&str]) {
    let o = drive(args);
    assert!(o.status.success(), "drive {args:?} failed: {}", stderr(&o));
}

#[test]
fn unknown_command_is_a_usage_error() {
    let o = drive(&["fly"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn help_succeeds() {
    let o = drive(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("pretrain-detector"));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, DESK_PRESET.replace("epochs = 50\nbatch = 32", "epochs = 0\nbatch = 32")).unwrap();
    let o = drive(&["--config", path.to_str().unwrap(), "collect"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.epochs"), "{}", stderr(&o));
}

#[test]
fn unknown_suite_kind_rejected() {
    let o = drive(&["--suite", "highway", "bench", "--agent", "expert"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("highway"));
}

#[test]
fn training_without_artifacts_reports_what_is_missing() {
    let dir = tempfile::tempdir().unwrap();
    let o = drive(&["--out", dir.path().to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing"), "{}", stderr(&o));
}

#[test]
fn expert_bench_writes_table_events_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    run_ok(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--suite",
        "follow,lead-vehicle-stop",
        "bench",
        "--agent",
        "expert",
    ]);
    let bench = out.join("bench-expert");
    let rows = read_table(bench.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].route, AGGREGATE_ROW);
    assert!(rows.iter().all(|r| r.collisions_vehicles == 0.0 && r.collisions_pedestrians == 0.0));
    assert!(bench.join("events.jsonl").exists());
    assert_eq!(std::fs::read_dir(bench.join("plots")).unwrap().count(), 2);

    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(Manifest::path(&out, "bench-expert")).unwrap()).unwrap();
    assert_eq!(manifest.command, "bench-expert");
    assert_eq!(manifest.artifacts["bench-expert/metrics.csv"], sha256_file(&bench.join("metrics.csv")).unwrap());

    std::fs::remove_dir_all(bench.join("plots")).unwrap();
    run_ok(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "plot", "--agent", "expert"]);
    assert_eq!(std::fs::read_dir(bench.join("plots")).unwrap().count(), 2);
}

#[test]
fn pipeline_runs_end_to_end_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let out = out.to_str().unwrap();
        for cmd in ["pretrain-detector", "collect", "train"] {
            run_ok(&["--config", cfg, "--out", out, "--seed", "3", cmd]);
        }
    }
    for file in ["detector.ckpt", "classifier.ckpt", "policy-detection.ckpt", "dataset/offline/dataset.bin"] {
        assert_eq!(sha256_file(&a.join(file)).unwrap(), sha256_file(&b.join(file)).unwrap(), "{file}");
    }
    let before = sha256_file(&a.join("policy-detection.ckpt")).unwrap();
    run_ok(&["--config", cfg, "--out", a.to_str().unwrap(), "--seed", "3", "train"]);
    assert_eq!(sha256_file(&a.join("policy-detection.ckpt")).unwrap(), before);

    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(Manifest::path(&a, "train-detection")).unwrap()).unwrap();
    assert_eq!(manifest.seed, 3);
    assert_eq!(RunConfig::parse(&manifest.config).unwrap().seed, 3);

    let out = a.to_str().unwrap();
    run_ok(&["--config", cfg, "--out", out, "--seed", "3", "dagger"]);
    run_ok(&["--config", cfg, "--out", out, "--seed", "3", "train", "--perception", "classification"]);
    run_ok(&["--config", cfg, "--out", out, "--seed", "3", "bench", "--agent", "detection"]);
    run_ok(&["--config", cfg, "--out", out, "--seed", "3", "ablate"]);
    assert!(a.join("policy-detection-dagger.ckpt").exists());
    assert!(a.join("bench-detection/metrics.csv").exists());
    assert!(a.join("ablation/paired.csv").exists());
}
