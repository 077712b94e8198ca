use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const C1: &str = r#"{
  "model": {"m": 0, "start": 0, "xi": [[-1, 0.5], [1, 0.5]], "eta": {"0": [[-1, 0.25], [1, 0.75]]}},
  "experiment": {"scales": [2000], "paths": 300, "times": [1.0], "seeds": [11],
    "long_steps": 20000, "lln_paths": 4, "sign_paths": 4, "l_ratio_paths": 9,
    "nu_scales": [100, 1000], "nu_paths": 200, "diag_scale": 400, "diag_paths": 300,
    "tolerances": {"ks": 0.12, "z": 4.0, "l_ratio_rel": 0.6, "nu_spread": 2.0}}
}"#;

fn mwl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mwl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_stdout(args: &[&str]) -> String {
    let out = mwl(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn analyze_reports_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), C1);
    let v: Value = serde_json::from_str(&ok_stdout(&["analyze", &config])).unwrap();
    assert!((v["gamma"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(v["pi"].as_array().unwrap().len(), 1);
    for key in ["e_plus", "e_minus", "sigma2", "truncation_report"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn analyze_accepts_bare_model() {
    let dir = tempfile::tempdir().unwrap();
    let bare = r#"{"m": 0, "xi": [[-1, 0.5], [1, 0.5]], "eta": {"0": [[-1, 0.9], [1, 0.1]]}}"#;
    let config = write_config(dir.path(), bare);
    let v: Value = serde_json::from_str(&ok_stdout(&["analyze", &config])).unwrap();
    assert!((v["gamma"].as_f64().unwrap() + 0.8).abs() < 1e-12);
}

#[test]
fn analyze_refuses_reducible_model() {
    let dir = tempfile::tempdir().unwrap();
    let trapped = r#"{"m": 1, "xi": [[-1, 0.5], [1, 0.5]],
        "eta": {"-1": [[1, 1.0]], "0": [[-1, 0.5], [1, 0.5]], "1": [[-1, 1.0]]}}"#;
    let config = write_config(dir.path(), trapped);
    let out = mwl(&["analyze", &config]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("irreducible"));
}

#[test]
fn simulate_writes_ledger_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), C1);
    let csv = dir.path().join("path.csv");
    let args = [
        "simulate",
        &config,
        "--steps",
        "500",
        "--seed",
        "4",
        "--path-csv",
        csv.to_str().unwrap(),
    ];
    let first = ok_stdout(&args);
    assert_eq!(first, ok_stdout(&args));
    let v: Value = serde_json::from_str(&first).unwrap();
    for key in [
        "n",
        "M_plus",
        "M_minus",
        "L_plus",
        "L_minus",
        "nu",
        "rho_plus_sum",
        "rho_minus_sum",
        "cycles",
        "excursions_pos",
        "excursions_neg",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["n"], 500);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,position");
    assert_eq!(lines.len(), 502);
    assert_eq!(lines[1], "0,0");
    let last: i64 = lines[501].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(Value::from(last), v["position"]);
}

#[test]
fn simulate_rejects_late_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), C1);
    let out = mwl(&[
        "simulate",
        &config,
        "--steps",
        "10",
        "--checkpoints",
        "5,20",
    ]);
    assert!(!out.status.success());
}

#[test]
fn convergence_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), C1);
    let out_dir = dir.path().join("out");
    let stdout = ok_stdout(&["convergence", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(stdout.contains("PASS marginal ks"));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["seeds"][0], 11);
    assert!(report["all_pass"].as_bool().unwrap(), "{stdout}");
    let csv = fs::read_to_string(out_dir.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("statistic,n,t,seed,value"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 5));
}

#[test]
fn diagnose_prints_series() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), C1);
    let v: Value = serde_json::from_str(&ok_stdout(&["diagnose", &config])).unwrap();
    assert_eq!(v["series"]["localization_fraction"], 0.0);
    assert_eq!(v["paths"], 300);
}

#[test]
fn skewbm_density_and_cdf() {
    let text = ok_stdout(&["skewbm", "density", "--beta", "0.5", "--t", "1", "--y", "1"]);
    let value: f64 = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((value - 1.5 * 0.241_970_724_519_143_37).abs() < 1e-15);
    let text = ok_stdout(&["skewbm", "cdf", "--beta", "-0.2", "--t", "1", "--y", "0,-1"]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "y,cdf");
    let at_zero: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((at_zero - 0.6).abs() < 1e-12);
    assert!(
        !mwl(&["skewbm", "cdf", "--beta", "0", "--t", "0", "--y", "1"])
            .status
            .success()
    );
}

#[test]
fn skewbm_sample_is_long_format_and_reproducible() {
    let args = [
        "skewbm", "sample", "--beta", "1", "--times", "0.5,1", "--paths", "3", "--seed", "5",
    ];
    let text = ok_stdout(&args);
    assert_eq!(text, ok_stdout(&args));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path_id,time,value");
    assert_eq!(lines.len(), 1 + 3 * 3);
    for l in &lines[1..] {
        let value: f64 = l.split(',').nth(2).unwrap().parse().unwrap();
        assert!(value >= 0.0);
    }
    let flip = ok_stdout(&[
        "skewbm",
        "sample",
        "--beta",
        "0.3",
        "--times",
        "1",
        "--method",
        "flip",
        "--resolution",
        "100",
    ]);
    assert_eq!(flip.lines().count(), 3);
}
