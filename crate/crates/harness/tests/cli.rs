use std::fs;
use std::process::Command;

fn gdqst() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gdqst"))
}

#[test]
fn dry_run_layers_flags_over_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 5\ntrials = 4\nqubits = [3]\nlevels = [0.2]\n").unwrap();
    let out = gdqst()
        .args(["bench-noise", "--dry-run", "--trials", "2", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 5"));
    assert!(text.contains("trials = 2"));
    assert!(text.contains("qubits = [3]"));
    assert!(text.contains("levels = [0.2]"));
}

#[test]
fn reconstruct_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let status = gdqst()
        .args(["reconstruct", "--qubits", "1", "--trials", "2", "--methods", "cd,pn", "--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["reconstruct_cd.csv", "reconstruct_pn_summary.csv", "manifest.toml", "states/reconstruct_pn_case0_trial1.txt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn failed_trial_gives_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let status = gdqst()
        .args(["bench-data", "--qubits", "1", "--sizes", "2", "--trials", "1", "--methods", "linear-inversion", "--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(dir.path().join("bench-data_linear-inversion.csv").is_file());
}

#[test]
fn invalid_spec_is_rejected_before_running() {
    let out = gdqst().args(["cv-cat", "--trials", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("trials"));
    let out = gdqst().args(["reconstruct", "--methods", "cvx"]).output().unwrap();
    assert!(!out.status.success());
}
