use std::path::PathBuf;
use std::process::{Command, Output};

const QP_LAYER: &str = include_str!("../../core/tests/data/qp_layer.dpp");
const QP_LAYER_DUMP: &str = include_str!("../../core/tests/data/qp_layer.canon.json");

fn write(name: &str, text: &str) -> PathBuf {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn optlayer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optlayer")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn solve_reports_optimum() {
    let file = write("solve_ok.dpp", QP_LAYER);
    let o = optlayer(&["solve", file.to_str().unwrap(), "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["status"], "Optimal");
    assert!((v["objective"].as_f64().unwrap() + 0.86983).abs() < 1e-4);
}

#[test]
fn malformed_file_exits_1_with_location() {
    let file = write("malformed.dpp", "var x[2]\nminimize sum(x\n");
    let o = optlayer(&["solve", file.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("3:1: expected ')'"), "{err}");
}

#[test]
fn missing_file_and_bad_usage_exit_1() {
    assert_eq!(code(&optlayer(&["solve", "/nonexistent/problem.dpp"])), 1);
    assert_eq!(code(&optlayer(&["frobnicate"])), 1);
    assert_eq!(code(&optlayer(&["--help"])), 0);
}

#[test]
fn infeasible_problem_exits_2() {
    let file = write("infeasible.dpp", "var z[1]\nminimize sum_squares(z)\nsubject to\n  z <= 0\n  -z <= -1\n");
    let o = optlayer(&["solve", file.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn dpp_violation_exits_1_and_names_the_path() {
    let file = write("violation.dpp", "var x[1]\nparam a[1]\nparam b[1]\nminimize a * b * sum(x)\n");
    let o = optlayer(&["canon", file.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("violation at") && err.contains("path"), "{err}");
}

#[test]
fn canon_output_matches_golden_and_is_deterministic() {
    let file = write("canon.dpp", QP_LAYER);
    let a = optlayer(&["canon", file.to_str().unwrap()]);
    let b = optlayer(&["canon", file.to_str().unwrap()]);
    assert_eq!(code(&a), 0);
    assert_eq!(String::from_utf8(a.stdout.clone()).unwrap(), QP_LAYER_DUMP);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn gradcheck_runs_and_is_seeded() {
    assert_eq!(code(&optlayer(&["gradcheck", "--trials", "0"])), 0);
    let a = optlayer(&["gradcheck", "--seed", "7", "--trials", "15"]);
    let b = optlayer(&["gradcheck", "--seed", "7", "--trials", "15"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(code(&optlayer(&["gradcheck", "--cone", "--trials", "5"])), 0);
}

#[test]
fn experiments_read_configs_and_write_out() {
    let cfg = write("poison.json", r#"{"seed": 3, "epsilon": 0.05}"#);
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("poison_out.json");
    let o = optlayer(&["poison", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["poisoned_test_loss"].as_f64().unwrap() > v["clean_test_loss"].as_f64().unwrap());

    let bad = write("poison_bad.json", r#"{"epsilon": 0.9}"#);
    assert_eq!(code(&optlayer(&["poison", "--config", bad.to_str().unwrap()])), 1);
    let broken = write("denoise_broken.json", "{ not json");
    assert_eq!(code(&optlayer(&["denoise", "--config", broken.to_str().unwrap()])), 1);

    let cfg = write("denoise.json", r#"{"iterations": 3, "signals": 5}"#);
    let o = optlayer(&["denoise", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["train_history"].as_array().unwrap().len(), 4);
}
