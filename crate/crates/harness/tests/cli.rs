use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eqkf_harness::scenarios;

fn eqkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqkf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_prints_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.json",
        scenarios::source("planar_line").unwrap(),
    );
    let out = eqkf(&[
        "run",
        cfg.to_str().unwrap(),
        "--steps",
        "3",
        "--methods",
        "augmented,unconstrained",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,method,t0,t1,m0,m1,err_norm,constraint_residual,cov_min_eig,cov_asym"
    );
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("1,augmented,"));
    assert!(rows[5].starts_with("3,unconstrained,"));
}

#[test]
fn seed_override_changes_output_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", scenarios::source("scalar").unwrap());
    let path = cfg.to_str().unwrap();
    let a = stdout(&eqkf(&["run", path, "--seed", "11"]));
    let b = stdout(&eqkf(&["run", path, "--seed", "11"]));
    let c = stdout(&eqkf(&["run", path, "--seed", "12"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn structured_output_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        scenarios::source("unit_circle").unwrap(),
    );
    let out_path = dir.path().join("report.json");
    let out = eqkf(&[
        "run",
        cfg.to_str().unwrap(),
        "--format",
        "structured",
        "--steps",
        "4",
        "--feedback",
        "off",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    assert_eq!(v["steps"], 4);
    assert_eq!(v["config"]["feedback"], false);
    assert_eq!(v["rng"], "chacha8");
}

#[test]
fn invalid_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_json = write(dir.path(), "bad.json", "{ not json");
    let out = eqkf(&["run", bad_json.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let good = write(dir.path(), "s.json", scenarios::source("scalar").unwrap());
    for args in [
        vec!["run", good.to_str().unwrap(), "--methods", "kalmanish"],
        vec!["run", good.to_str().unwrap(), "--format", "xml"],
        vec!["run", dir.path().join("missing.json").to_str().unwrap()],
        vec!["run"],
    ] {
        assert_eq!(eqkf(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn numerical_failure_exits_3_with_step() {
    // Process noise along the line keeps A P A' at zero once the constraint has been fed back.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.json",
        scenarios::source("planar_line").unwrap(),
    );
    let out = eqkf(&[
        "run",
        cfg.to_str().unwrap(),
        "--feedback",
        "on",
        "--methods",
        "augmented",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    let step = err
        .split("at step ")
        .nth(1)
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|s| s.parse::<u64>().ok());
    assert!(matches!(step, Some(k) if k >= 2), "{err}");
}
