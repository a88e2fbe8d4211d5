//! End-to-end tests of the `sarpu` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sarpu"))
}

fn toy_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy.csv")
}

fn write(path: &Path, content: &str) {
    fs::write(path, content).unwrap();
}

fn run_config(dir: &Path, extra: &str) -> PathBuf {
    let config = dir.join("config.json");
    write(
        &config,
        &format!(
            r#"{{
  "dataset": "{}",
  "methods": ["scar"],
  "mechanism": {{"type": "scar", "c": 0.5}},
  "fold_seeds": [1, 2],
  "em": {{"max_iterations": 12}}{extra}
}}"#,
            toy_csv().display()
        ),
    );
    config
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_writes_results_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = run_config(dir.path(), "");
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_ok(&out);

    let results = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dataset,method,mechanism,c,c_bar,delta_c,p_on,p_off,seed,fold,\
         f1,abs_prior_error,propensity_mae,propensity_mse,iterations,converged"
    );
    // 2 seeds x 5 folds
    assert_eq!(lines.count(), 10);
    assert!(out_dir.join("summary.csv").exists());
}

#[test]
fn run_emits_trace_files_when_requested() {
    let dir = tempfile::tempdir().unwrap();
    let config = run_config(dir.path(), r#", "write_traces": true"#);
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_ok(&out);

    let trace = fs::read_to_string(out_dir.join("trace_scar_1_0.csv")).unwrap();
    assert!(trace.starts_with("iteration,mean_propensity,expected_loglik"));
    assert!(trace.lines().count() > 1);
}

#[test]
fn unknown_method_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(
        &config,
        &format!(
            r#"{{"dataset": "{}", "methods": ["bogus"], "mechanism": {{"type": "scar", "c": 0.5}}}}"#,
            toy_csv().display()
        ),
    );
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus"), "stderr: {stderr}");
    assert_eq!(stderr.lines().count(), 1);
}

#[test]
fn missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(
        &config,
        r#"{"dataset": "/nonexistent.csv", "methods": ["scar"], "mechanism": {"type": "scar", "c": 0.5}}"#,
    );
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_expands_grid_and_rejects_empty() {
    let dir = tempfile::tempdir().unwrap();
    let config = run_config(dir.path(), "");
    let grid = dir.path().join("grid.json");
    write(&grid, r#"{"c": [0.3, 0.7]}"#);
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&config)
        .arg("--grid")
        .arg(&grid)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_ok(&out);
    let results = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    // 2 grid points x 1 method x 10 cells + header
    assert_eq!(results.lines().count(), 21);
    assert!(results.contains(",scar,scar,0.3,"));
    assert!(results.contains(",scar,scar,0.7,"));

    let empty = dir.path().join("empty.json");
    write(&empty, "{}");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&config)
        .arg("--grid")
        .arg(&empty)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid"));
}

#[test]
fn label_writes_pu_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mech = dir.path().join("mech.json");
    write(&mech, r#"{"type": "scar", "c": 0.4}"#);
    let out_csv = dir.path().join("labeled.csv");
    let out = bin()
        .args(["label", "--data"])
        .arg(toy_csv())
        .arg("--mechanism")
        .arg(&mech)
        .args(["--seed", "9", "--out"])
        .arg(&out_csv)
        .output()
        .unwrap();
    assert_ok(&out);

    let text = fs::read_to_string(&out_csv).unwrap();
    let mut labeled = 0usize;
    let mut violations = 0usize;
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let s: u8 = cells[cells.len() - 2].parse().unwrap();
        let y: u8 = cells[cells.len() - 1].parse().unwrap();
        if s == 1 {
            labeled += 1;
        }
        if s > y {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
    assert!(labeled > 0);

    // same seed reproduces the file exactly
    let out_csv2 = dir.path().join("labeled2.csv");
    let out = bin()
        .args(["label", "--data"])
        .arg(toy_csv())
        .arg("--mechanism")
        .arg(&mech)
        .args(["--seed", "9", "--out"])
        .arg(&out_csv2)
        .output()
        .unwrap();
    assert_ok(&out);
    assert_eq!(text, fs::read_to_string(&out_csv2).unwrap());
}

#[test]
fn env_var_sets_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = run_config(dir.path(), "");
    let out_dir = dir.path().join("from_env");
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .env("SARPU_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(out_dir.join("results.csv").exists());
}

#[test]
fn version_and_help() {
    let out = bin().arg("--version").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("sarpu "));

    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    for sub in ["run", "sweep", "label"] {
        assert!(help.contains(sub));
    }
}
