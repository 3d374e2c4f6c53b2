use std::path::PathBuf;
use std::process::{Command, Output};

fn data(rel: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "data", rel].iter().collect();
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilecast")).args(args).output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn search_tradeoff_json() {
    let model = data("models/tradeoff.model");
    let o = run(&["search", "--model", &model, "--max-aies", "12", "--topk", "3", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let designs = v["designs"].as_array().unwrap();
    assert_eq!(designs.len(), 3);
    assert_eq!(designs[0]["rank"], 1);
}

#[test]
fn search_text_is_deterministic() {
    let model = data("models/jsc_m.model");
    let a = run(&["search", "--model", &model, "--topk", "2"]);
    let b = run(&["search", "--model", &model, "--topk", "2", "--sequential"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn estimate_motivating_cascade_zero_profile() {
    let model = data("models/motivating.model");
    let design = data("designs/motivating_cascade.json");
    let o = run(&["estimate", "--model", &model, "--design", &design, "--profile", "zero", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["designs"][0]["estimate"]["total_cycles"].as_f64(), Some(48.0));
}

#[test]
fn simulate_writes_trace_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let model = data("models/tradeoff.model");
    let design = data("designs/tradeoff_b.json");
    let o = run(&[
        "simulate",
        "--model",
        &model,
        "--design",
        &design,
        "--seed",
        "7",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.contains("PASS"), "{out}");
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("cycle,"));
    assert!(csv.lines().count() > 1);
}

#[test]
fn calibrate_writes_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.toml");
    let o = run(&["calibrate", "--out", out.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let _: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let model = data("models/jsc_m.model");
    let o = run(&["search", "--model", &model, "--profile", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn infeasible_budget_exits_2() {
    let model = data("models/tradeoff.model");
    let o = run(&["search", "--model", &model, "--max-aies", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn illegal_mapping_exits_2() {
    let model = data("models/tradeoff.model");
    let o = run(&["estimate", "--model", &model, "--mapping", "1,3,1;1,1,1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn io_and_parse_errors_exit_1() {
    assert_eq!(code(&run(&["search", "--model", "/nonexistent/x.model"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.model");
    std::fs::write(&bad, "this is not a model\n").unwrap();
    assert_eq!(code(&run(&["search", "--model", bad.to_str().unwrap()])), 1);
    assert_eq!(code(&run(&["search"])), 1);
}
