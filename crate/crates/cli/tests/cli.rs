use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn odecausal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odecausal")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = odecausal(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

fn matrix(p: PathBuf) -> Vec<Vec<f64>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn generate_linear(dir: &Path, n: &str, seed: &str) -> PathBuf {
    let out = dir.join(format!("linear-{n}-{seed}"));
    ok(&["generate", "linear", "--n", n, "--seed", seed, "--out", path(&out)]);
    out
}

#[test]
fn generation_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["generate", "linear", "--n", "3", "--seed", "7", "--out", path(out)]);
    }
    for f in ["trajectory.csv", "clean.csv", "truth.csv", "system.json", "corruption.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = json(a.join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["spec"]["dim"], 3);
    assert_eq!(manifest["config"]["spec"]["density"], 0.3, "defaults are materialized");
}

#[test]
fn linear_bundle_has_at_most_200_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    ok(&["generate", "linear", "--n", "10", "--sigma", "0", "--irr", "0", "--seed", "1", "--out", path(&out)]);
    let text = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x0,x1,x2,x3,x4,x5,x6,x7,x8,x9");
    let rows = lines.count();
    assert!(rows <= 200 && rows >= 2, "{rows} rows");
}

#[test]
fn lotka_volterra_defaults_give_the_full_graph() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lv");
    ok(&["generate", "lv", "--out", path(&out), "--plot"]);
    assert_eq!(matrix(out.join("truth.csv")), vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
    assert!(fs::read_to_string(out.join("trajectory.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn invalid_spec_names_the_field_and_still_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.json");
    fs::write(&cfg, r#"{"spec": {"density": "dense"}}"#).unwrap();
    let out = dir.path().join("g");
    let res = odecausal(&["generate", "linear", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("spec.density"), "{err}");
    let manifest = json(out.join("manifest.json"));
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["exit_code"], 2);

    let res = odecausal(&["generate", "linear", "--n", "3", "--irr", "1.5", "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("irr"));

    fs::write(&cfg, r#"{"spec": {"system": "lv"}}"#).unwrap();
    let res = odecausal(&["generate", "spiral", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn flags_override_config_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"corruption": {"sigma": 0.5, "irr": 0.2}}"#).unwrap();
    let out = dir.path().join("g");
    ok(&["generate", "spiral", "--config", path(&cfg), "--sigma", "0.1", "--out", path(&out)]);
    let c = json(out.join("corruption.json"));
    assert_eq!(c["sigma"], 0.1);
    assert_eq!(c["irr"], 0.2);
}

#[test]
fn empty_seed_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = odecausal(&["sweep", "--seeds", "--out", path(&dir.path().join("s"))]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    let res = odecausal(&["sweep", "--workers", "0", "--out", path(&dir.path().join("s"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn small_sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    ok(&["sweep", "--dims", "2", "--sigmas", "0,0.1", "--irrs", "0", "--seeds", "0", "--epochs", "20", "--workers", "2", "--out", path(&out)]);
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "dim,sigma,irr,seeds,shd_bar,tpr,tnr");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,0,0,0,"));
    assert!(lines[2].starts_with("2,0.1,0,0,"));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = odecausal(&["train", path(&dir.path().join("nope")), "--out", path(&dir.path().join("t"))]);
    assert_eq!(res.status.code(), Some(4));
}

#[test]
fn divergence_exits_with_numeric_code_and_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_linear(dir.path(), "3", "2");
    let out = dir.path().join("t");
    let res = odecausal(&["train", path(&data), "--lr", "1e6", "--epochs", "50", "--activation", "linear", "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("epoch"));
    assert_eq!(json(out.join("manifest.json"))["exit_code"], 3);
}

#[test]
fn train_infer_pipeline_on_a_linear_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_linear(dir.path(), "3", "4");
    let model = dir.path().join("model");
    ok(&["train", path(&data), "--order", "2", "--activation", "linear", "--epochs", "60", "--out", path(&model)]);
    let checkpoint = model.join("checkpoint.json");
    let ck = json(checkpoint.clone());
    assert_eq!(ck["architecture"]["order"], "second");
    assert_eq!(ck["field"]["net"]["layers"].as_array().unwrap().len(), 3);
    let log = fs::read_to_string(model.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 61);

    let lin = dir.path().join("lin");
    let jac = dir.path().join("jac");
    ok(&["infer", path(&checkpoint), path(&data), "--mode", "linear", "--out", path(&lin), "--plot"]);
    ok(&["infer", path(&checkpoint), path(&data), "--mode", "jacobian", "--out", path(&jac), "--plot"]);
    assert_eq!(matrix(lin.join("adjacency.csv")), matrix(jac.join("adjacency.csv")));
    let metrics = json(lin.join("metrics.json"));
    for key in ["shd", "shd_bar", "tpr", "tnr", "missing", "extra", "reversed"] {
        assert!(metrics.get(key).is_some(), "{key}");
    }
    assert!(jac.join("jacobians.svg").exists());

    let empty = dir.path().join("empty");
    ok(&["infer", path(&checkpoint), path(&data), "--epsilon", "1e9", "--out", path(&empty)]);
    assert!(matrix(empty.join("adjacency.csv")).iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn replaying_a_manifest_reproduces_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("lv");
    ok(&["generate", "lv", "--out", path(&data)]);
    let first = dir.path().join("first");
    ok(&["train", path(&data), "--arch", "8,8", "--epochs", "15", "--lambda", "0.2", "--seed", "3", "--out", path(&first)]);
    let second = dir.path().join("second");
    ok(&["train", path(&data), "--config", path(&first.join("manifest.json")), "--out", path(&second)]);
    assert_eq!(fs::read(first.join("checkpoint.json")).unwrap(), fs::read(second.join("checkpoint.json")).unwrap());
    let echo = json(second.join("manifest.json"));
    assert_eq!(echo["config"]["train"]["lambda"], 0.2);
    assert_eq!(echo["config"]["architecture"]["hidden"], serde_json::json!([8, 8]));
}

#[test]
fn larger_lambda_gives_a_smaller_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_linear(dir.path(), "3", "1");
    let penalty = |lambda: &str| {
        let out = dir.path().join(format!("l{lambda}"));
        ok(&["train", path(&data), "--activation", "linear", "--epochs", "200", "--lambda", lambda, "--out", path(&out)]);
        json(out.join("checkpoint.json"))["report"]["final_penalty"].as_f64().unwrap()
    };
    let (free, penalized) = (penalty("0"), penalty("0.01"));
    assert!(penalized < free, "{penalized} vs {free}");
}

#[test]
fn clamping_every_variable_freezes_the_system() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("lv");
    ok(&["generate", "lv", "--out", path(&data)]);
    let spec = dir.path().join("clamp.json");
    fs::write(&spec, r#"{"clamps": [{"index": 0, "value": 1.5}, {"index": 1, "value": 0.5}]}"#).unwrap();
    let out = dir.path().join("i");
    ok(&["intervene", "--spec", path(&spec), "--system", path(&data), "--out", path(&out)]);
    let text = fs::read_to_string(out.join("truth.csv")).unwrap();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!((v[1], v[2]), (1.5, 0.5));
    }
}

#[test]
fn learned_and_true_interventions_are_compared() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("lv");
    ok(&["generate", "lv", "--out", path(&data)]);
    let model = dir.path().join("m");
    ok(&["train", path(&data), "--arch", "8,8", "--epochs", "10", "--out", path(&model)]);
    let checkpoint = model.join("checkpoint.json");
    let spec = dir.path().join("clamp.json");
    fs::write(&spec, r#"{"clamps": [{"index": 1, "value": 1.0}], "horizon": {"t_end": 1.0, "points": 11}}"#).unwrap();
    let out = dir.path().join("i");
    ok(&["intervene", "--spec", path(&spec), "--system", path(&data), "--checkpoint", path(&checkpoint), "--out", path(&out), "--plot"]);
    let report = json(out.join("report.json"));
    assert_eq!(report["gap"].as_array().unwrap().len(), 2);
    assert_eq!(report["gap"][1], 0.0, "both clamped components sit at the clamp value");
    assert!(out.join("learned.csv").exists() && out.join("truth.svg").exists());

    fs::write(&spec, r#"{"edits": [{"row": 0, "col": 0, "multiplier": 8}], "horizon": {"t_end": 1.0, "points": 11}}"#).unwrap();
    let res = odecausal(&["intervene", "--spec", path(&spec), "--checkpoint", path(&checkpoint), "--x0", "1,1", "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(2), "edits on a nonlinear field are rejected");
}

#[test]
fn unidentifiability_demo_reports_equal_penalties() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("u");
    let res = ok(&["demo-unidentifiability", "--out", path(&out)]);
    assert!(!res.stdout.is_empty());
    let report = json(out.join("unidentifiability.json"));
    assert_eq!(report["l11_identity"], 2.0);
    assert_eq!(report["l11_swap"], 2.0);
    assert!(report["analytic_deviation"].as_f64().unwrap() <= 1e-10);
}
