use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn run(cmd: &str, config: &str, extra: &[&str]) -> (i32, Value, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_conjlab"))
        .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(extra)
        .output()
        .unwrap();
    let report = serde_json::from_slice(&output.stdout).unwrap_or(Value::Null);
    (output.status.code().unwrap(), report, dir)
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

fn csv_header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

const SMALL: &str = r#""grids": {"samples": 4, "t": {"start": 0, "end": 2, "count": 5}, "tau": [0, 1]}"#;

#[test]
fn verify_exit_codes() {
    let (code, report, dir) = run("verify", r#"{"catalog": {"id": "S1"}}"#, &[]);
    assert_eq!(code, 0);
    assert!((report["p_hat"].as_f64().unwrap() - 0.1 / std::f64::consts::E).abs() < 1e-8);
    assert_eq!(report["seed"], 42);
    let csv = dir.path().join("out/verify.csv");
    assert_eq!(&csv_header(&csv)[..3], ["quantity", "t", "tau"]);
    assert!(dir.path().join("out/verify.json").exists());

    let (code, _, _) = run("verify", r#"{"catalog": {"id": "S1", "params": {"K": 0.5}}}"#, &[]);
    assert_eq!(code, 1);
    let (code, report, _) = run("verify", r#"{"catalog": {"id": "S3", "params": {"forcing_scale": 30}}}"#, &[]);
    assert_eq!(code, 2);
    assert!(report["q_hat"].as_f64().unwrap() >= 1.0);
}

#[test]
fn config_errors_are_fatal() {
    let (code, _, _) = run("verify", r#"{"catalog": {"id": "S7"}}"#, &[]);
    assert_eq!(code, 2);
    let (code, _, _) = run("verify", r#"{"catalog": {"id": "S1"}, "tol": {"quad": -1}}"#, &[]);
    assert_eq!(code, 2);
}

#[test]
fn conjugate_s1_tables() {
    let cfg = format!(r#"{{"catalog": {{"id": "S1"}}, {SMALL}}}"#);
    let (code, report, dir) = run("conjugate", &cfg, &["--seed", "7"]);
    assert_eq!(code, 0, "{report}");
    assert_eq!(report["seed"], 7);
    assert!(report["max_roundtrip_HG"].as_f64().unwrap() <= 1e-6);
    assert!(report["max_roundtrip_GH"].as_f64().unwrap() <= 1e-6);
    let path = dir.path().join("out/conjugate.csv");
    let header = csv_header(&path);
    assert_eq!(header.last().unwrap(), "status");
    let rows = csv_rows(&path);
    assert!(rows.iter().any(|r| &r[0] == "H"));
    assert!(rows.iter().all(|r| r.get(header.len() - 1) == Some("ok")));
}

#[test]
fn conjugate_unforced_has_zero_correction() {
    let cfg = format!(r#"{{"catalog": {{"id": "S2", "params": {{"forcing_scale": 0}}}}, {SMALL}}}"#);
    let (code, _, dir) = run("conjugate", &cfg, &[]);
    assert_eq!(code, 0);
    let path = dir.path().join("out/conjugate.csv");
    let header = csv_header(&path);
    let v0 = header.iter().position(|h| h == "value_0").unwrap();
    for r in csv_rows(&path).iter().filter(|r| &r[0] == "H-id" || &r[0] == "G-id") {
        assert_eq!(r[v0].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn conjugate_is_deterministic() {
    let cfg = format!(r#"{{"catalog": {{"id": "S3"}}, {SMALL}}}"#);
    let (code, a, _) = run("conjugate", &cfg, &[]);
    let (_, b, _) = run("conjugate", &cfg, &[]);
    assert_eq!(code, 0, "{a}");
    assert_eq!(a["equivalence"], b["equivalence"]);
    assert!(a["max_roundtrip_HG"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn refuses_without_force_on_soft_failure() {
    let cfg = format!(r#"{{"catalog": {{"id": "S1", "params": {{"K": 0.5}}}}, {SMALL}}}"#);
    let (code, report, _) = run("conjugate", &cfg, &[]);
    assert_eq!(code, 1);
    assert!(report["aborted"].is_string());
    let (code, _, _) = run("conjugate", &cfg, &["--force"]);
    assert_eq!(code, 0);
    let fatal = r#"{"catalog": {"id": "S3", "params": {"forcing_scale": 30}}}"#;
    assert_eq!(run("conjugate", fatal, &["--force"]).0, 2);
}

#[test]
fn differentiate_s1_identity() {
    let cfg = format!(r#"{{"catalog": {{"id": "S1"}}, {SMALL}}}"#);
    let (code, report, dir) = run("differentiate", &cfg, &[]);
    assert_eq!(code, 0, "{report}");
    let path = dir.path().join("out/differentiate.csv");
    let header = csv_header(&path);
    let v0 = header.iter().position(|h| h == "value_0").unwrap();
    let dh: Vec<f64> = csv_rows(&path)
        .iter()
        .filter(|r| &r[0] == "dH")
        .map(|r| r[v0].parse().unwrap())
        .collect();
    assert_eq!(dh.len(), 4);
    assert!(dh.iter().all(|v| (v - 1.0).abs() < 1e-6));
}

#[test]
fn differentiate_s3_discrepancies() {
    let cfg = format!(r#"{{"catalog": {{"id": "S3"}}, {SMALL}}}"#);
    let (code, report, _) = run("differentiate", &cfg, &[]);
    assert_eq!(code, 0, "{report}");
    assert!(report["max_dg_fd_error"].as_f64().unwrap() <= 1e-4);
    assert!(report["max_dh_fd_error"].as_f64().unwrap() <= 1e-4);
    assert!(report["max_d2w_symmetry_defect"].as_f64().unwrap() <= 1e-6);
}
