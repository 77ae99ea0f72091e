use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn declqg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_declqg")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let p = path(dir, name);
    let mut args = vec!["generate", "--out", s(&p)];
    args.extend_from_slice(extra);
    let out = declqg(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    p
}

fn synth(problem: &Path, gains: &Path) {
    let out = declqg(&["synth", "--problem", s(problem), "--out", s(gains)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synth_writes_gains_and_reports_small_residual() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "3", "--dims", "2,1,1,1,2,1", "--horizon", "6"]);
    let gains = path(&dir, "g.json");
    let out = declqg(&["synth", "--problem", s(&problem), "--out", s(&gains)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let residual: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("residual = "))
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .expect("residual line");
    assert!(residual <= 1e-9, "{text}");
    let g = read_json(&gains);
    assert_eq!(g["horizon"], 6);
    assert_eq!(g["K_hat"].as_array().unwrap().len(), 6);
    assert_eq!(g["Sigma_hat"].as_array().unwrap().len(), 7);
    assert!(g["J_hat0"].as_f64().unwrap() >= g["J0"].as_f64().unwrap());
}

#[test]
fn synth_rejects_structure_violation() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "1", "--horizon", "3"]);
    let mut doc = read_json(&problem);
    doc["dynamics"]["A"][1][0][1] = Value::from(0.25);
    let bad = path(&dir, "bad.json");
    std::fs::write(&bad, doc.to_string()).unwrap();
    let out = declqg(&["synth", "--problem", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("StructureError"), "{}", stderr(&out));
}

#[test]
fn synth_reports_parse_and_missing_file_errors() {
    let dir = TempDir::new().unwrap();
    let junk = path(&dir, "junk.json");
    std::fs::write(&junk, "{ not json").unwrap();
    let out = declqg(&["synth", "--problem", s(&junk)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("ParseError"));
    let out = declqg(&["synth", "--problem", s(&path(&dir, "absent.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fixed_point_method_on_decoupled_instance_takes_one_iteration() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "2", "--coupling", "0", "--horizon", "5"]);
    let out = declqg(&["synth", "--problem", s(&problem), "--method", "fixedpoint", "--tol", "1e-10"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("converged in 1 iteration"), "{}", stdout(&out));
}

#[test]
fn fixed_point_method_without_budget_is_a_solver_failure() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "2", "--horizon", "5"]);
    let out = declqg(&["synth", "--problem", s(&problem), "--method", "fixedpoint", "--max-iter", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("NonConvergence"));
}

#[test]
fn simulate_matches_two_player_cost() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "5", "--horizon", "3"]);
    let gains = path(&dir, "g.json");
    synth(&problem, &gains);
    let report = path(&dir, "r.json");
    let out = declqg(&[
        "simulate", "--problem", s(&problem), "--gains", s(&gains), "--rollouts", "100000", "--seed", "1", "--out", s(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = read_json(&report);
    let j_hat0 = read_json(&gains)["J_hat0"].as_f64().unwrap();
    let (mean, se) = (r["mean_cost"].as_f64().unwrap(), r["standard_error"].as_f64().unwrap());
    assert!((mean - j_hat0).abs() <= 3.0 * se, "{mean} vs {j_hat0} (se {se})");
    assert_eq!(r["rollouts"], 100000);
    assert_eq!(r["seed"], 1);
    assert_eq!(r["controller"], "two-player");
    assert_eq!(r["cov_error_z"].as_array().unwrap().len(), 4);
}

#[test]
fn simulate_rejects_gains_for_another_horizon() {
    let dir = TempDir::new().unwrap();
    let short = generate(&dir, "short.json", &["--seed", "5", "--horizon", "3"]);
    let long = generate(&dir, "long.json", &["--seed", "5", "--horizon", "4"]);
    let gains = path(&dir, "g.json");
    synth(&short, &gains);
    let out = declqg(&["simulate", "--problem", s(&long), "--gains", s(&gains), "--rollouts", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("horizon"), "{}", stderr(&out));
}

#[test]
fn simulate_two_rollouts_gives_a_valid_report() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "8", "--horizon", "4"]);
    let report = path(&dir, "r.json");
    let out = declqg(&["simulate", "--problem", s(&problem), "--rollouts", "2", "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = read_json(&report);
    assert_eq!(r["rollouts"], 2);
    assert!(r["standard_error"].as_f64().unwrap().is_finite());
    let out = declqg(&["simulate", "--problem", s(&problem), "--rollouts", "1"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn simulate_is_independent_of_thread_cap() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "9", "--horizon", "4"]);
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let report = path(&dir, &format!("r{threads}.json"));
        let out = Command::new(env!("CARGO_BIN_EXE_declqg"))
            .args(["simulate", "--problem", s(&problem), "--rollouts", "3000", "--seed", "4", "--out", s(&report)])
            .env("DECLQG_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        reports.push(std::fs::read_to_string(&report).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn verify_all_passes_on_reference_instance() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "5", "--horizon", "3"]);
    let out = declqg(&["verify", "--problem", s(&problem), "--oracle", "all"]);
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    for check in ["qp", "fixedpoint", "perturb"] {
        assert!(text.contains(&format!("[PASS] {check}")), "{text}");
    }
}

#[test]
fn verify_detects_corrupted_gains() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "5", "--horizon", "3"]);
    let gains = path(&dir, "g.json");
    synth(&problem, &gains);
    let mut doc = read_json(&gains);
    let entry = doc["K_hat"][1][1][0].as_f64().unwrap();
    doc["K_hat"][1][1][0] = Value::from(entry + 0.1);
    std::fs::write(&gains, doc.to_string()).unwrap();
    let out = declqg(&["verify", "--problem", s(&problem), "--gains", s(&gains), "--oracle", "qp"]);
    assert_eq!(out.status.code(), Some(3), "{}", stdout(&out));
    assert!(stdout(&out).contains("[FAIL] qp"));
}

#[test]
fn verify_rejects_gains_violating_masks() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "5", "--horizon", "3"]);
    let gains = path(&dir, "g.json");
    synth(&problem, &gains);
    let mut doc = read_json(&gains);
    doc["K_hat"][0][0][0] = Value::from(1.0);
    std::fs::write(&gains, doc.to_string()).unwrap();
    let out = declqg(&["verify", "--problem", s(&problem), "--gains", s(&gains)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("StructureError"));
}

#[test]
fn verify_fixed_point_without_budget_is_inconclusive() {
    let dir = TempDir::new().unwrap();
    let problem = generate(&dir, "p.json", &["--seed", "5", "--horizon", "3"]);
    let out = declqg(&["verify", "--problem", s(&problem), "--oracle", "fixedpoint", "--max-iter", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("INCONCLUSIVE"));
    assert!(stderr(&out).contains("warning"));
}

#[test]
fn bench_single_horizon_prints_one_row() {
    let out = declqg(&["bench", "--horizons", "20", "--dims", "1,1,1,1,1,1", "--repeats", "1", "--assert-linear"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.lines().nth(1).unwrap().trim_start().starts_with("20 "));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(declqg(&["bench", "--horizons", "0"]).status.code(), Some(64));
    assert_eq!(declqg(&["synth"]).status.code(), Some(64));
    assert_eq!(declqg(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(declqg(&["generate", "--out", "x.json", "--dims", "1,2"]).status.code(), Some(64));
    assert_eq!(declqg(&["--help"]).status.code(), Some(0));
}
