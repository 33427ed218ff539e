use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn robot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robot"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn dist_reports_capped_value_and_outlier() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "x\n0\n").unwrap();
    fs::write(dir.path().join("b.csv"), "x\n3\n").unwrap();
    let out = robot(dir.path(), &["dist", "--source", "a.csv", "--target", "b.csv", "--lambda", "1", "--plan", "plan.csv"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["value"], 2.0);
    assert_eq!(v["outliers"], serde_json::json!([0]));
    let plan = fs::read_to_string(dir.path().join("plan.csv")).unwrap();
    assert!(plan.starts_with("i,j,mass"));
}

#[test]
fn dist_single_precision_agrees() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "x0,x1\n0,0\n1,1\n").unwrap();
    fs::write(dir.path().join("b.csv"), "x0,x1,weight\n0,1,0.25\n4,4,0.75\n").unwrap();
    let run = |p: &str| json(&robot(dir.path(), &["dist", "--source", "a.csv", "--target", "b.csv", "--lambda", "2", "--precision", p]));
    let (d, s) = (run("f64"), run("f32"));
    assert!((d["value"].as_f64().unwrap() - s["value"].as_f64().unwrap()).abs() < 1e-5);
}

#[test]
fn missing_file_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = robot(dir.path(), &["dist", "--source", "nope.csv", "--target", "nope.csv", "--lambda", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(json(&out)["error"].is_string());
}

#[test]
fn nonpositive_lambda_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "x\n0\n").unwrap();
    let out = robot(dir.path(), &["dist", "--source", "a.csv", "--target", "a.csv", "--lambda", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_then_estimate_and_select() {
    let dir = tempfile::tempdir().unwrap();
    let out = robot(
        dir.path(),
        &["sample", "--family", "gaussian", "--mean", "1.5", "--n", "200", "--seed", "4", "--out", "s.csv"],
    );
    assert!(out.status.success());
    let out = robot(
        dir.path(),
        &[
            "estimate", "--data", "s.csv", "--family", "gaussian", "--param", "mean", "--lambda", "5", "--m", "200", "--k",
            "5", "--bounds", "-5", "5", "--seed", "1", "--out", "fit.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!((v["theta_hat"][0].as_f64().unwrap() - 1.5).abs() < 0.3);
    assert!(dir.path().join("fit.json").exists());

    let v = json(&robot(dir.path(), &["select-lambda", "--data", "s.csv", "--grid-n", "20"]));
    assert_eq!(v["grid"].as_array().unwrap().len(), 20);
    assert!(v["lambda_star"].as_f64().unwrap() > 0.0);
}

#[test]
fn estimate_without_bounds_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.csv"), "x\n0\n1\n").unwrap();
    let out = robot(dir.path(), &["estimate", "--data", "s.csv", "--family", "gaussian"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn conc_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&robot(dir.path(), &["conc", "--n", "100", "--tau", "0.1", "--lambda", "1", "--t", "1", "--sigma", "1"]));
    assert!((v["threshold_clean"].as_f64().unwrap() - (0.02f64.sqrt() + 0.04)).abs() < 1e-12);
    let expect = 0.9f64.sqrt() * 0.02f64.sqrt() + 0.04 + 0.2;
    assert!((v["threshold_contaminated"].as_f64().unwrap() - expect).abs() < 1e-12);
}

#[test]
fn regress_flags_a_planted_outlier() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x,y\n");
    for i in 0..40 {
        let x = i as f64 * 0.25;
        let noise = ((i * 37 % 11) as f64 - 5.0) / 3.0;
        let y = 2.0 * x + 1.0 + noise + if i == 17 { 15.0 } else { 0.0 };
        csv.push_str(&format!("{x},{y}\n"));
    }
    fs::write(dir.path().join("xy.csv"), csv).unwrap();
    let out = robot(dir.path(), &["regress", "--data", "xy.csv", "--lambda", "1", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["robot"]["kept_mask"][17], false);
    assert!((v["robot"]["alpha_hat"].as_f64().unwrap() - 2.0).abs() < 0.15);
}

#[test]
fn adapt_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let mut src = String::from("x,y\n");
    let mut tgt = String::from("x\n");
    for i in 0..30 {
        let x = -3.0 + 0.2 * i as f64;
        src.push_str(&format!("{x},{}\n", (x / 2.0).sin()));
        tgt.push_str(&format!("{}\n", x + 0.05));
    }
    fs::write(dir.path().join("src.csv"), src).unwrap();
    fs::write(dir.path().join("tgt.csv"), tgt).unwrap();
    let out = robot(
        dir.path(),
        &[
            "adapt", "--source", "src.csv", "--target", "tgt.csv", "--lambda", "2", "--alpha", "1", "--out", "model.json",
            "--diagnostics", "diag.csv",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = fs::read_to_string(dir.path().join("diag.csv")).unwrap();
    assert!(diag.starts_with("iteration,outliers,objective,coef_change"));
    let out = robot(dir.path(), &["predict", "--model", "model.json", "--data", "tgt.csv", "--out", "pred.csv"]);
    assert!(out.status.success());
    assert_eq!(json(&out)["rows"], 30);
    let pred = fs::read_to_string(dir.path().join("pred.csv")).unwrap();
    assert_eq!(pred.lines().count(), 31);
}

#[test]
fn validate_reports_domain_errors_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"experiment":"table1","n":50,"epsilon":1.2,"eta":4,"seed":1,"output_dir":"out"}"#,
    )
    .unwrap();
    let out = robot(dir.path(), &["validate", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["valid"], false);

    fs::write(dir.path().join("ok.json"), r#"{"experiment":"sensitivity","n":20,"lambdas":[1],"output_dir":"out"}"#).unwrap();
    let out = robot(dir.path(), &["validate", "ok.json"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["errors"].as_array().unwrap().len(), 0);
    assert_eq!(v["warnings"].as_array().unwrap().len(), 1);

    fs::write(dir.path().join("broken.json"), "{not json").unwrap();
    assert_eq!(robot(dir.path(), &["validate", "broken.json"]).status.code(), Some(2));
}

#[test]
fn zero_replicate_manifest_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("m.json"),
        r#"{"experiment":"table1","n":50,"epsilon":0.1,"eta":4,"seed":1,"replicates":0,"output_dir":"out"}"#,
    )
    .unwrap();
    let out = robot(dir.path(), &["run", "m.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert_eq!(csv.trim(), "replicate,merwe,mewe,merwe_evals,mewe_evals");
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert!(summary["merwe"].is_null());
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn sensitivity_manifest_tail_equals_two_lambda() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("m.json"),
        r#"{"experiment":"sensitivity","n":1000,"lambdas":[3],"x_min":-20,"x_max":20,"x_steps":41,"seed":2,"output_dir":"out"}"#,
    )
    .unwrap();
    assert!(robot(dir.path(), &["run", "m.json"]).status.success());
    let csv = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(last[1], 20.0);
    assert_eq!(last[2], 6.0);
}

#[test]
fn manifest_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let body = |out: &str| {
        format!(r#"{{"experiment":"regression","n":80,"epsilon":0.1,"eta":4,"n_test":50,"seed":9,"replicates":3,"output_dir":"{out}"}}"#)
    };
    fs::write(dir.path().join("a.json"), body("a")).unwrap();
    fs::write(dir.path().join("b.json"), body("b")).unwrap();
    assert!(robot(dir.path(), &["run", "a.json"]).status.success());
    assert!(robot(dir.path(), &["run", "b.json"]).status.success());
    let a = fs::read(dir.path().join("a/results.csv")).unwrap();
    let b = fs::read(dir.path().join("b/results.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 4);
}

#[test]
fn negative_bandwidth_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("m.json"),
        r#"{"experiment":"adapt","ns":2,"nt":2,"bandwidth":-1,"seed":1,"replicates":1,"output_dir":"out"}"#,
    )
    .unwrap();
    let out = robot(dir.path(), &["run", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out/results.csv").exists());
}

#[test]
fn thread_cap_is_honoured_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let ok = Command::new(env!("CARGO_BIN_EXE_robot"))
        .args(["conc", "--n", "10", "--lambda", "1", "--sigma", "1"])
        .env("ROBOT_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(ok.status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_robot"))
        .args(["conc", "--n", "10", "--lambda", "1", "--sigma", "1"])
        .env("ROBOT_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
