//! End-to-end runs of the `mdlab` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mdlab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdlab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("MDLAB_SEED")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_TRAIN: [&str; 14] = [
    "--n",
    "6",
    "--k",
    "2",
    "--n-train",
    "64",
    "--n-val",
    "32",
    "--D",
    "16",
    "--steps",
    "40",
    "--eval-every",
    "10",
];

/// Every output except the manifests, which carry wall-clock time.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| !e.file_name().to_string_lossy().starts_with("manifest_"))
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn decompose_check_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdlab(
        dir.path(),
        &["decompose-check", "--n", "4", "--k", "2", "--t", "0.2"],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&dir.path().join("decompose_check.json"));
    assert!(report["report"]["relative_deviation"].as_f64().unwrap() < 1e-9);
    assert_eq!(report["pass"], true);
    assert!(dir.path().join("manifest_decompose-check.json").exists());
}

#[test]
fn infeasible_enumeration_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdlab(dir.path(), &["decompose-check", "--n", "20", "--k", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        mdlab(dir.path(), &["schedule-opt", "--bogus"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        mdlab(dir.path(), &["schedule-opt", "--k", "3", "--n", "20"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        mdlab(dir.path(), &["parity-train", "--n", "3", "--k", "5"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn schedule_opt_reports_both_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdlab(
        dir.path(),
        &["schedule-opt", "--k", "2", "--n", "20", "--delta", "0.05"],
    );
    assert!(out.status.success());
    let v = read_json(&dir.path().join("schedule_opt.json"));
    assert_eq!(v["signal_optimal"]["t0"].as_f64().unwrap(), 1.0 / 3.0);
    assert!(
        (v["complexity_optimal"]["t1"].as_f64().unwrap() - (1.0 - (1.0 + 21f64.sqrt()) / 10.0))
            .abs()
            < 1e-12
    );
    assert!(
        v["complexity_optimal"]["n_min"].as_u64().unwrap()
            <= v["signal_optimal"]["n_min"].as_u64().unwrap()
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("complexity_optimal"));
}

#[test]
fn energy_scan_collapses_on_pure_signal_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdlab(dir.path(), &["energy-scan", "--D", "64", "--draws", "3"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("energy_scan.csv")).unwrap();
    assert!(csv.starts_with("draw_index,energy,rank,theoretical_constant"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn parity_train_both_writes_metrics_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["parity-train", "--objective", "both", "--checkpoint"];
    args.extend(SMALL_TRAIN);
    let out = mdlab(dir.path(), &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "md_metrics.csv",
        "supervised_metrics.csv",
        "md_summary.json",
        "supervised_summary.json",
        "gap_comparison.json",
        "md_params.ckpt",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(dir.path().join("md_metrics.csv")).unwrap();
    assert!(csv.starts_with("step,train_loss,val_loss,train_acc,val_acc"));
    assert_eq!(csv.lines().count(), 1 + 5);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let mut args = vec!["--seed", "9", "parity-train"];
        args.extend(SMALL_TRAIN);
        assert!(mdlab(d.path(), &args).status.success());
    }
    assert_eq!(outputs(a.path()), outputs(b.path()));
}

#[test]
fn seed_environment_variable_matches_the_flag() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut args = vec!["--seed", "5", "parity-train"];
    args.extend(SMALL_TRAIN);
    assert!(mdlab(a.path(), &args).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_mdlab"))
        .arg("--out")
        .arg(b.path())
        .arg("parity-train")
        .args(SMALL_TRAIN)
        .env("MDLAB_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(outputs(a.path()), outputs(b.path()));
}

#[test]
fn config_file_overrides_preset_and_flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"n": 6, "k": 2, "n_train": 64, "n_val": 32, "D": 16, "steps": 30, "eval_every": 10}"#,
    )
    .unwrap();
    let out = mdlab(
        dir.path(),
        &[
            "parity-train",
            "--preset",
            "desk",
            "--config",
            cfg.to_str().unwrap(),
            "--steps",
            "20",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = read_json(&dir.path().join("md_summary.json"));
    assert_eq!(summary["config"]["steps"], 20);
    assert_eq!(summary["config"]["width"], 16);
    assert_eq!(summary["config"]["optimizer"], "adamw");
}

#[test]
fn textlab_and_sweep_run_at_small_scale() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdlab(
        dir.path(),
        &[
            "textlab",
            "--block-size",
            "16",
            "--D",
            "16",
            "--batch-size",
            "4",
            "--steps",
            "3",
            "--eval-blocks",
            "20",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("textlab_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);

    let mut args = vec!["sweep", "--ranges", "0:0.2,0.1:0.5"];
    args.extend(SMALL_TRAIN);
    let out = mdlab(dir.path(), &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}
