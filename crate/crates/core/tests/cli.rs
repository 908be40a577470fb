use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{"kind": "sparse_regression", "seed": 3, "m": 20, "n": 40, "k": 3}"#;

fn mifb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mifb")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, schedules: &str) -> String {
    let path = dir.join(name);
    let text = format!(r#"{{"problem": {SMALL}, "schedules": [{schedules}], "output": {{"directory": "{}"}}}}"#, dir.join("default-out").display());
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const TWO: &str = r#"{"name": "FB", "a": [0.0], "gamma": 0.3}, {"name": "1-iFB", "s": 1, "gamma": 0.3}"#;

#[test]
fn run_writes_one_trace_per_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TWO);
    let out = dir.path().join("out");
    let o = mifb(&["run", &cfg, "--out", out.to_str().unwrap(), "--no-plot"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["FB_trace.csv", "1-iFB_trace.csv", "feasibility.json", "metadata.json", "summary.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(!out.join("run.svg").exists());
    let trace = std::fs::read_to_string(out.join("1-iFB_trace.csv")).unwrap();
    let header = trace.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "k,phi,delta,resid,activity,dist_to_xstar,identified");
    assert!(trace.lines().any(|l| l == "# seed: 3"));
    assert!(trace.lines().any(|l| l.starts_with("# feasibility: {")));
}

#[test]
fn default_output_directory_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TWO);
    let o = mifb(&["compare", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("default-out");
    assert!(out.join("comparison.csv").exists());
    let svg = std::fs::read_to_string(out.join("compare.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn seed_override_replaces_the_instance_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TWO);
    let out = dir.path().join("out");
    let o = mifb(&["run", &cfg, "--out", out.to_str().unwrap(), "--no-plot", "--seed-override", "11"]);
    assert_eq!(o.status.code(), Some(0));
    let trace = std::fs::read_to_string(out.join("FB_trace.csv")).unwrap();
    assert!(trace.lines().any(|l| l == "# seed: 11"));
}

#[test]
fn infeasible_schedule_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"name": "big", "a": [0.9], "gamma": 0.8, "rule": "theorem22"}"#);
    let o = mifb(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("delta"));
}

#[test]
fn compare_needs_two_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"name": "FB", "a": [0.0], "gamma": 0.3}"#);
    let o = mifb(&["compare", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_or_missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"problem": {"kind": "pcp", "seed": 0}, "schedules": [], "extra": 1}"#).unwrap();
    assert_eq!(mifb(&["run", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(mifb(&["run", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn rates_reports_every_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TWO);
    let out = dir.path().join("out");
    let o = mifb(&["rates", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("rates.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("FB,") && rows[2].starts_with("1-iFB,"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("rates.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().map(|a| a.len()), Some(2));
    assert!(out.join("rates.svg").exists());
}
