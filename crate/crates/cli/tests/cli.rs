use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn boolnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boolnet")).args(args).output().expect("binary runs")
}

fn config_path(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).to_string_lossy().into_owned()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty() && *l != "i,j")
        .map(str::to_owned)
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_at_zero_intensity_writes_empty_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = boolnet(&["simulate", &config_path("simulate.toml"), "--lambda", "0", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data_lines(&dir.path().join("points.txt")).is_empty());
    assert!(data_lines(&dir.path().join("edges.csv")).is_empty());
}

#[test]
fn every_output_carries_the_config_digest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = boolnet(&["measures", &config_path("simulate.toml"), "--lambda", "50", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let digest = read_json(&dir.path().join("run.json"))["config_digest"].as_str().unwrap().to_owned();
    assert_eq!(digest.len(), 64);
    for f in ["l1.json", "l2.csv", "reference.json", "run.json"] {
        assert!(fs::read_to_string(dir.path().join(f)).unwrap().contains(&digest), "{f}");
    }
}

#[test]
fn rate_of_the_reference_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = config_path("simulate.toml");
    assert_eq!(boolnet(&["measures", &cfg, "--lambda", "50", "--out", out]).status.code(), Some(0));
    let reference = dir.path().join("reference.json");
    let o = boolnet(&["rate", &cfg, "--omega", reference.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rate = read_json(&dir.path().join("rate.json"));
    assert_eq!(rate["mark"]["value"].as_f64(), Some(0.0));
}

#[test]
fn rate_with_a_connectivity_measure_reports_the_joint_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = config_path("simulate.toml");
    assert_eq!(boolnet(&["measures", &cfg, "--out", out]).status.code(), Some(0));
    let l1 = dir.path().join("l1.json");
    let l2 = dir.path().join("l2.csv");
    let o = boolnet(&["rate", &cfg, "--omega", l1.to_str().unwrap(), "--pi", l2.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rate = read_json(&dir.path().join("rate.json"));
    // N/λ is almost never exactly one, so the mark rate is infinite
    let mass = rate["mark"]["decomposition"]["mass"].as_f64().unwrap();
    assert!((mass - 1.0).abs() > 1e-9);
    assert_eq!(rate["mark"]["value"], "inf");
    assert_eq!(rate["joint"], "inf");
    assert!(rate["conditional"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn oracle_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = boolnet(&["oracle-check", &config_path("oracle.toml"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "PASS");
    let report = read_json(&dir.path().join("oracle.json"));
    assert_eq!(report["verdict"], "PASS");
    assert!(report["cell_counts"]["total_variation"].as_f64().unwrap() < 0.02);
}

#[test]
fn failing_verdict_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = boolnet(&[
        "oracle-check",
        &config_path("oracle.toml"),
        "--replicas",
        "200",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(read_json(&dir.path().join("oracle.json"))["verdict"], "FAIL");
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config_path("simulate.toml");
    let args = |dir: &Path, workers: &'static str| {
        let o = boolnet(&[
            "measures",
            &cfg,
            "--set",
            "mode=soft",
            "--workers",
            workers,
            "--deterministic",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    };
    args(a.path(), "1");
    args(b.path(), "3");
    for f in ["l1.json", "l2.csv", "reference.json", "run.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert!(read_json(&a.path().join("run.json")).get("timestamp").is_none());
}

#[test]
fn timestamp_is_recorded_unless_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let o = boolnet(&["simulate", &config_path("simulate.toml"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(read_json(&dir.path().join("run.json"))["timestamp"].is_u64());
}

#[test]
fn malformed_config_exits_two_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = fs::read_to_string(config_path("simulate.toml")).unwrap().replace("r_max = 0.04", "r_max = \"big\"");
    fs::write(&bad, text).unwrap();
    let o = boolnet(&["simulate", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("regime.mark"), "{err}");

    let o = boolnet(&["simulate", &config_path("simulate.toml"), "--set", "domain.side=-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("domain"));
}

#[test]
fn missing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = boolnet(&["simulate", "/nonexistent/config.toml", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = boolnet(&["rate", &config_path("simulate.toml"), "--omega", "/nonexistent/l1.json", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--omega"));
}

#[test]
fn ldp_verify_without_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = boolnet(&["ldp-verify", &config_path("simulate.toml"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ldp"));
}
