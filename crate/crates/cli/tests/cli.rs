use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sgld(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgld-cmd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SGLD_SEED")
        .env_remove("SGLD_WORKERS")
        .output()
        .expect("binary runs")
}

fn config_arg(name: &str) -> String {
    configs().join(format!("{name}.json")).display().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn passing_run_exits_zero_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_arg("audit-decomposition");
    let out = sgld(&["audit-decomposition", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("audit-decomposition.csv").is_file());
    assert_eq!(manifest(dir.path())["pass"], true);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS audit-decomposition"));
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_arg("assumptions-gaussian-wrong");
    let out = sgld(&["audit-assumptions", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(manifest(dir.path())["pass"], false);
}

#[test]
fn errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = sgld(&["tail-ratio", "--config", "/nonexistent/cfg.json"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/cfg.json"));

    let cfg = config_arg("audit-decomposition");
    let mismatch = sgld(&["tail-ratio", "--config", &cfg], dir.path());
    assert_eq!(mismatch.status.code(), Some(1));

    let unknown = sgld(&["bogus", "--config", &cfg], dir.path());
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn seed_and_workers_come_from_flags_or_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_arg("audit-decomposition");
    let a = dir.path().join("env");
    let out = Command::new(env!("CARGO_BIN_EXE_sgld-cmd"))
        .args(["audit-decomposition", "--config", &cfg, "--out"])
        .arg(&a)
        .env("SGLD_SEED", "1234")
        .env("SGLD_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let m = manifest(&a);
    assert_eq!(m["config"]["seed"], 1234);
    assert_eq!(m["workers"], 2);

    let b = dir.path().join("flags");
    let out = sgld(&["audit-decomposition", "--config", &cfg, "--seed", "1234", "--workers", "1"], &b);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.join("audit-decomposition.csv")).unwrap(),
        std::fs::read(b.join("audit-decomposition.csv")).unwrap()
    );
}

#[test]
fn audit_flag_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_arg("audit-decomposition");
    let out = sgld(&["audit-decomposition", "--config", &cfg, "--audit"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let traj = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .any(|e| e.file_name().to_string_lossy().starts_with("trajectory_"));
    assert!(traj);
}
