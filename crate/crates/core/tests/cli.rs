//! End-to-end runs of the `knockoffs` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use knockoffs::io;
use knockoffs::rng;
use knockoffs::simulator::{self, ScenarioConfig};
use knockoffs::stats::StatisticKind;
use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knockoffs")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, m: &DMatrix<f64>) -> PathBuf {
    let path = dir.path().join(name);
    io::write_matrix_csv(&path, m, None).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn sample_with_zero_d_returns_the_input() {
    let dir = TempDir::new().unwrap();
    let x = DMatrix::from_row_slice(3, 2, &[0.5, -1.0, 2.0, 0.25, -0.125, 3.0]);
    let xp = write(&dir, "x.csv", &x);
    let tp = write(&dir, "theta.csv", &DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
    let dp = dir.path().join("d.csv");
    io::write_vector_csv(&dp, &DVector::zeros(2), "d").unwrap();
    let out = dir.path().join("xt.csv");
    let o = bin(&["sample", "--x", s(&xp), "--theta-tilde", s(&tp), "--d", s(&dp), "--out", s(&out), "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(io::read_matrix_csv(&out).unwrap(), x);
}

#[test]
fn sample_is_reproducible_from_seed() {
    let dir = TempDir::new().unwrap();
    let model = simulator::gen_ar1_precision(4, 0.5).unwrap();
    let xp = write(&dir, "x.csv", &model.sample(20, &mut rng::seeded(1)).unwrap());
    let tp = write(&dir, "theta.csv", model.precision());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = bin(&["sample", "--x", s(&xp), "--theta-tilde", s(&tp), "--out", s(&out), "--seed", seed]);
        assert!(o.status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv", "7"), run("b.csv", "7"));
    assert_ne!(run("a.csv", "7"), run("c.csv", "8"));
}

#[test]
fn infeasible_d_exits_with_numerical_code() {
    let dir = TempDir::new().unwrap();
    let xp = write(&dir, "x.csv", &DMatrix::from_element(2, 2, 1.0));
    let tp = write(&dir, "theta.csv", &DMatrix::identity(2, 2));
    let dp = dir.path().join("d.csv");
    io::write_vector_csv(&dp, &DVector::from_element(2, 5.0), "d").unwrap();
    let out = dir.path().join("xt.csv");
    let o = bin(&["sample", "--x", s(&xp), "--theta-tilde", s(&tp), "--d", s(&dp), "--out", s(&out), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn bad_input_exits_with_one_and_names_the_line() {
    let dir = TempDir::new().unwrap();
    let xp = dir.path().join("x.csv");
    std::fs::write(&xp, "x1,x2\n1,2\n3\n").unwrap();
    let tp = write(&dir, "theta.csv", &DMatrix::identity(2, 2));
    let out = dir.path().join("xt.csv");
    let o = bin(&["sample", "--x", s(&xp), "--theta-tilde", s(&tp), "--out", s(&out), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    // missing required seed is a usage error
    assert_eq!(bin(&["verify"]).status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn filter_with_knockoffs_dominating_selects_nothing() {
    // X is pure noise, X_tilde = Y, so every W_j is negative
    let dir = TempDir::new().unwrap();
    let n = 40;
    let mut r = rng::seeded(3);
    let x = rng::standard_normal_matrix(&mut r, n, 3);
    let y = rng::standard_normal_matrix(&mut r, n, 1);
    let mut xt = DMatrix::zeros(n, 3);
    for j in 0..3 {
        xt.set_column(j, &(y.column(0) * (j as f64 + 1.0)));
    }
    let xp = write(&dir, "x.csv", &x);
    let xtp = write(&dir, "xt.csv", &xt);
    let yp = write(&dir, "y.csv", &y);
    let out = dir.path().join("sel.json");
    let o = bin(&[
        "filter", "--x", s(&xp), "--xt", s(&xtp), "--y", s(&yp), "--q", "0.2", "--statistic", "marginal", "--seed",
        "0", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out);
    assert!(v["result"]["statistics"]["w"].as_array().unwrap().iter().all(|w| w.as_f64().unwrap() < 0.0));
    assert_eq!(v["result"]["selection"]["selected"], serde_json::json!([]));
    assert_eq!(v["result"]["selection"]["threshold"], "inf");
    assert_eq!(v["command"], "filter");
    assert_eq!(v["format_version"], 1);
}

#[test]
fn simulate_small_config_controls_fdr() {
    let dir = TempDir::new().unwrap();
    let cfg = ScenarioConfig {
        n: 100,
        p: 20,
        ar1_rho: 0.3,
        signal_count: 5,
        signal_amplitude: 4.0,
        statistic: StatisticKind::MarginalCorrelationDifference,
        replicates: 200,
        ..ScenarioConfig::reference()
    };
    let cp = dir.path().join("cfg.json");
    std::fs::write(&cp, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = dir.path().join("report.json");
    let o = bin(&["--threads", "2", "simulate", "--config", s(&cp), "--seed", "11", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&out);
    let fdr = &v["result"]["empirical_fdr"];
    let (mean, se) = (fdr["mean"].as_f64().unwrap(), fdr["se"].as_f64().unwrap());
    assert!(mean <= cfg.q + 3.0 * se, "fdr {mean} se {se}");
    assert_eq!(v["seed"], 11);
    assert_eq!(v["config"]["seed"], 11);
    assert!(v["result"]["empirical_power"]["mean"].as_f64().unwrap() > 0.5);
}

#[test]
fn simulate_rejects_unknown_config_fields() {
    let dir = TempDir::new().unwrap();
    let cp = dir.path().join("cfg.json");
    let mut cfg = serde_json::to_value(ScenarioConfig::reference()).unwrap();
    cfg["replicatez"] = 3.into();
    std::fs::write(&cp, cfg.to_string()).unwrap();
    let o = bin(&["simulate", "--config", s(&cp), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicatez"));
}

#[test]
fn diagnose_reports_zero_kl_for_exact_estimate() {
    let dir = TempDir::new().unwrap();
    let model = simulator::gen_ar1_precision(3, 0.4).unwrap();
    let x = model.sample(30, &mut rng::seeded(2)).unwrap();
    let xp = write(&dir, "x.csv", &x);
    let xtp = write(&dir, "xt.csv", &x.map(|v| v * 0.5));
    let tp = write(&dir, "theta.csv", model.precision());
    let o = bin(&["diagnose", "--x", s(&xp), "--xt", s(&xtp), "--theta", s(&tp), "--theta-tilde", s(&tp)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let kl = v["result"]["diagnostics"]["kl_hat"].as_array().unwrap();
    assert!(kl.iter().all(|k| k.as_f64().unwrap() == 0.0));
    assert_eq!(v["result"]["bound_report"]["delta_theta"], 0.0);
}

#[test]
fn adversary_and_verify_run() {
    let o = bin(&["adversary", "--seed", "1", "--replicates", "200"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["command"], "adversary");
    assert!(v["result"]["level_under_q"]["mean"].is_f64());

    let o = bin(&["verify", "--seed", "1", "--instances", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["passed"], true);
}
