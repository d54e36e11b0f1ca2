use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_opiniondrift");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn opiniondrift(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("OPINIONDRIFT_OUT")
        .output()
        .unwrap()
}

fn write_config(dir: &TempDir, body: &str) -> PathBuf {
    let path = dir.path().join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_reaches_symmetric_consensus() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = opiniondrift(&["simulate"], &configs().join("narrow_consensus.json"), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(out.join("summary.json"));
    let clusters = summary["clusters"]["clusters"].as_array().unwrap();
    assert_eq!(clusters.len(), 1);
    assert!(clusters[0]["position"].as_f64().unwrap().abs() <= 1e-9);
}

#[test]
fn malformed_config_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(&tmp, "{ \"initial\": { \"lo\": -1.0, ");
    let o = opiniondrift(&["simulate"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed config"));
}

#[test]
fn invalid_field_is_named() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(&tmp, r#"{ "initial": { "lo": -1.0, "hi": 1.0 }, "n_cells": 100, "r": -0.1 }"#);
    let o = opiniondrift(&["simulate"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("`r`"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_config_file_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = opiniondrift(&["simulate"], &tmp.path().join("absent.json"), &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn hitting_max_steps_exits_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(&tmp, r#"{ "initial": { "lo": -1.0, "hi": 1.0 }, "n_cells": 400, "r": 0.1, "max_steps": 2 }"#);
    let o = opiniondrift(&["simulate"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(out.join("summary.json").exists());
}

#[test]
fn runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("clusters_no_input.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(opiniondrift(&["simulate"], &cfg, &a).status.code(), Some(0));
    assert_eq!(opiniondrift(&["simulate"], &cfg, &b).status.code(), Some(0));
    for name in ["trajectory.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn env_var_overrides_out_flag() {
    let tmp = TempDir::new().unwrap();
    let (flag, env) = (tmp.path().join("flag"), tmp.path().join("env"));
    let o = Command::new(BIN)
        .args(["simulate", "--config"])
        .arg(configs().join("narrow_consensus.json"))
        .arg("--out")
        .arg(&flag)
        .env("OPINIONDRIFT_OUT", &env)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(env.join("summary.json").exists());
    assert!(!flag.exists());
}

#[test]
fn trajectory_csv_format() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    opiniondrift(&["simulate"], &configs().join("narrow_consensus.json"), &out);
    let text = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.iter().all(|h| h.parse::<f64>().is_err()), "{header:?}");
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), header.len());
        for f in fields {
            f.parse::<f64>().unwrap_or_else(|_| panic!("not a number: {f}"));
        }
    }
}

#[test]
fn sigma_sweep_fits_positive_slope() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = opiniondrift(&["sweep", "--jobs", "4"], &configs().join("sweep_sigma.json"), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "sigma,r,range_length,attracted_mass,converged");
    assert_eq!(csv.lines().count(), 18);
    let fit = json(out.join("fit.json"));
    assert!(fit["a"].as_f64().unwrap() > 0.0);
    assert!(fit["r_squared"].as_f64().unwrap() >= 0.95);
}

#[test]
fn sweep_is_independent_of_jobs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        r#"{ "initial": { "lo": -1.0, "hi": 1.0 }, "n_cells": 400, "r": 0.1, "max_steps": 20000,
             "sweep": { "mean": 0.0, "sigma": [0.02, 0.05, 0.08], "r": [0.1] } }"#,
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(opiniondrift(&["sweep", "--jobs", "1"], &cfg, &a).status.code(), Some(0));
    assert_eq!(opiniondrift(&["sweep", "--jobs", "3"], &cfg, &b).status.code(), Some(0));
    assert_eq!(fs::read(a.join("sweep.csv")).unwrap(), fs::read(b.join("sweep.csv")).unwrap());
}

#[test]
fn distracting_strategy_wins() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = opiniondrift(&["compare"], &configs().join("strategy_compare.json"), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(out.join("compare.json"));
    assert_eq!(report["winner"], "distracting");
    assert!(out.join("direct_trajectory.csv").exists());
    assert!(out.join("distracting_trajectory.csv").exists());
}

#[test]
fn attraction_range_is_symmetric() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = opiniondrift(&["attraction-range"], &configs().join("attraction_range.json"), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let res = json(out.join("attraction_range.json"));
    let (lo, hi) = (res["lo"].as_f64().unwrap(), res["hi"].as_f64().unwrap());
    assert!(lo < 0.0 && hi > 0.0);
    assert!((lo + hi).abs() < 1e-9);
}

#[test]
fn oracle_check_agrees() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = opiniondrift(&["oracle-check"], &configs().join("clusters_no_input.json"), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(json(out.join("oracle_summary.json"))["pass"], true);
}

#[test]
fn missing_section_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let o = opiniondrift(&["sweep"], &configs().join("narrow_consensus.json"), &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}
