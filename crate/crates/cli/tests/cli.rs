use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use adaptrim::records::read_all;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adaptrim"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/test_time.jsonl")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_runs_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let steps = d("steps.jsonl");
    let scored = d("scored.jsonl");
    let comp = d("comp.jsonl");
    let rewards = d("rewards.jsonl");
    let adv = d("adv.jsonl");
    for args in [
        vec!["segment", "--in", s(&fixture()), "--out", s(&steps)],
        vec!["score", "--scorer", "attention", "--in", s(&steps), "--out", s(&scored)],
        vec!["compress", "--by-difficulty", "--in", s(&scored), "--out", s(&comp)],
        vec!["reward", "--in", s(&comp), "--out", s(&rewards)],
        vec!["advantage", "--group-by", "problem_id", "--in", s(&rewards), "--out", s(&adv)],
    ] {
        let out = run(&args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let records = read_all(&adv).unwrap();
    assert_eq!(records.len(), read_all(fixture()).unwrap().len());
    for r in &records {
        assert!(r.steps.is_some() && r.step_scores.is_some() && r.difficulty.is_some());
        let reward = r.reward.as_ref().unwrap();
        assert_eq!(reward.compressed.is_some(), r.compression.is_some());
        assert_eq!(r.advantage.as_ref().unwrap().group, r.problem_id);
    }
}

#[test]
fn random_scorer_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    for (out, seed) in outs.iter().zip(["7", "7", "8"]) {
        assert_eq!(code(&run(&["score", "--scorer", "random", "--seed", seed, "--in", s(&fixture()), "--out", s(out)])), 0);
    }
    let read = |p: &PathBuf| fs::read(p).unwrap();
    assert_eq!(read(&outs[0]), read(&outs[1]));
    assert_ne!(read(&outs[0]), read(&outs[2]));
}

#[test]
fn confidence_scorer_needs_logprobs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["score", "--scorer", "confidence", "--in", s(&fixture()), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("topk_logprobs"));
}

#[test]
fn stdin_and_stdout_work() {
    let mut child = bin()
        .args(["segment", "--in", "-", "--out", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let line = r#"{"problem_id":"p","rollout_id":"r","raw_text":"<think>So a. Wait b.</think>x","correct":true,"reasoning_token_count":0,"token_char_spans":[]}"#;
    child.stdin.take().unwrap().write_all(line.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["steps"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes_separate_validation_from_io() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"problem_id\": 3}\n").unwrap();
    let bad_cfg = dir.path().join("cfg.json");
    fs::write(&bad_cfg, r#"{"compression_rates": {"easy": 1.5}}"#).unwrap();

    assert_eq!(code(&run(&["segment", "--in", s(&bad), "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["segment", "--in", "/nonexistent.jsonl", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["reward", "--config", s(&bad_cfg), "--in", s(&fixture()), "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["reward", "--config", "/nonexistent.json", "--in", s(&fixture()), "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["compress", "--tau", "1.5", "--in", s(&fixture()), "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["compress", "--in", s(&fixture()), "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["advantage", "--group-by", "color", "--in", s(&fixture()), "--out", s(&out)])), 1);
    // advantages need rewards first
    assert_eq!(code(&run(&["advantage", "--in", s(&fixture()), "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn config_prints_resolved_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    fs::write(&empty, "").unwrap();
    let out = run(&["config", "--config", s(&empty)]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rollouts"], 8);
    assert_eq!(v["window"], 10);
    assert_eq!(v["compression_rates"]["easy"], 0.6);
    assert_eq!(v["static_tau"], 0.4);
}

#[test]
fn eval_otb_reports_auc_and_f1() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("eval.jsonl");
    fs::write(
        &input,
        "{\"correct\":true,\"think_tokens\":2}\n{\"correct\":true,\"think_tokens\":5}\n{\"correct\":false,\"think_tokens\":1}\n\
         {\"correct\":true,\"think_tokens\":900,\"split\":\"underthinking\"}\n{\"correct\":false,\"think_tokens\":900,\"split\":\"underthinking\"}\n",
    )
    .unwrap();
    let out = dir.path().join("report.json");
    assert_eq!(code(&run(&["eval-otb", "--in", s(&input), "--tmax", "5", "--out", s(&out)])), 0);
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["sample_count"], 3);
    assert!((v["auc_oaa"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(v["acc_ut"], 0.5);
    let f1 = 2.0 * 0.2 * 0.5 / 0.7;
    assert!((v["f1"].as_f64().unwrap() - f1).abs() < 1e-12);

    assert_eq!(code(&run(&["eval-otb", "--in", s(&input), "--tmax", "5", "--acc-ut", "1", "--out", s(&out)])), 0);
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["acc_ut"], 1.0);
    assert_eq!(code(&run(&["eval-otb", "--in", s(&input), "--tmax", "0", "--out", s(&out)])), 1);
}

#[test]
fn simulate_writes_report_with_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"simulator": {"iterations": 4, "problems": {"easy": 2, "medium": 2, "hard": 2}, "write_records": true}}"#,
    )
    .unwrap();
    let out = dir.path().join("report");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&out)])), 0);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["simulator"]["iterations"], 4);
    assert_eq!(summary["config"]["rollouts"], 8);
    let iterations = fs::read_to_string(out.join("iterations.jsonl")).unwrap();
    assert_eq!(iterations.lines().count(), 4);
    let records = read_all(out.join("records.jsonl")).unwrap();
    assert_eq!(records.len(), 4 * 6 * 8);
}
