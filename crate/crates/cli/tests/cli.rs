//! End-to-end checks of the command-line interface against the shipped
//! configurations.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pruning-observer"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn short_config(dir: &Path) -> PathBuf {
    // Trimmed-down copy of the nominal scenario for fast CLI runs.
    let text = std::fs::read_to_string(repo_config("nominal.toml"))
        .unwrap()
        .replace("duration = 60.0", "duration = 6.0")
        .replace("start_time = 20.0", "start_time = 2.0")
        .replace("trials = 10000", "trials = 500");
    let path = dir.join("short.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn pmf_prints_expected_distribution() {
    let out = bin().args(["pmf", "0.5,0.5"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.25 0.5 0.25");
}

#[test]
fn pmf_rejects_garbage() {
    let out = bin().args(["pmf", "0.5,banana"]).output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn unknown_subcommand_fails_with_stderr() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_config_fails_cleanly() {
    let out = bin().args(["run", "/nonexistent/config.toml"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn run_is_reproducible_and_writes_artifacts() {
    let dir = std::env::temp_dir().join(format!("po-cli-run-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = short_config(&dir);
    for sub in ["a", "b"] {
        let out = bin()
            .args(["run"])
            .arg(&config)
            .args(["--seed", "11", "--out"])
            .arg(dir.join(sub))
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.join("a/run.csv")).unwrap();
    let b = std::fs::read(dir.join("b/run.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "same seed must give identical CSV logs");
    for artifact in ["metrics.json", "path.svg", "velocity.svg", "monitor.svg"] {
        assert!(dir.join("a").join(artifact).exists(), "{artifact} missing");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("a/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["seed"], 11);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_emits_three_strategy_rows() {
    let dir = std::env::temp_dir().join(format!("po-cli-sweep-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = short_config(&dir);
    let out = bin()
        .args(["run"])
        .arg(&config)
        .args(["--sweep-strategies", "--out"])
        .arg(dir.join("sweep"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.join("sweep/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 4, "header + 3 strategies: {summary}");
    assert!(lines[1].starts_with("ukf-only,"));
    assert!(lines[2].starts_with("ukf-with-oracle,"));
    assert!(lines[3].starts_with("pruning-ukf,"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn prune_mc_writes_statistics() {
    let dir = std::env::temp_dir().join(format!("po-cli-mc-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = short_config(&dir);
    let out = bin()
        .args(["prune-mc"])
        .arg(&config)
        .args(["--out"])
        .arg(dir.join("mc"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("eta=0.80"), "stdout: {stdout}");
    let csv = std::fs::read_to_string(dir.join("mc/prune_mc.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
    assert!(csv.starts_with("eta,l_eta,trials,"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn attack_reports_stealth_margin() {
    let out = bin()
        .args(["attack"])
        .arg(repo_config("v_attack.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("support channels"));
    assert!(stdout.contains("leakage"));
    assert!(stdout.contains("monitor quiet"), "stdout: {stdout}");
}
