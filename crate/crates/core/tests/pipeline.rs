//! End-to-end training, sweeps, reports and the command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use tscac::actors::LagrangeWeights;
use tscac::cmdp::ResponseSpec;
use tscac::env::SimulatorConfig;
use tscac::experiment::*;

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.training.iterations = 20;
    c.training.batch_size = 16;
    c.training.replay_capacity = 16;
    c.behavior.log_sessions = 30;
    c.eval.mc_sessions = 30;
    c
}

fn two_channel(mut c: ExperimentConfig) -> ExperimentConfig {
    c.simulator = SimulatorConfig {
        interaction_base_rates: vec![0.0161],
        affinity_pref_mix: vec![0.0],
        state_dim: 0,
        ..SimulatorConfig::default()
    }
    .normalized()
    .unwrap();
    c.response_spec = ResponseSpec::uniform(&["watch_time", "like"], 0.95).unwrap();
    c.lambdas = LagrangeWeights::new(vec![1e-2]).unwrap();
    c
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        out.insert(rel, fs::read(&entry).unwrap());
    }
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn same_seed_gives_byte_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, algo) in [(&a, Algorithm::Tscac), (&b, Algorithm::Tscac)] {
        let mut c = small();
        c.seeds = vec![7];
        c.algorithm = algo;
        c.output_dir = dir.path().to_path_buf();
        run_training(&c).unwrap();
    }
    let ta = tree(a.path());
    assert!(ta.keys().any(|k| k.ends_with("main.json")));
    assert!(ta.keys().any(|k| k.ends_with("metrics.csv")));
    assert_eq!(ta, tree(b.path()));
}

#[test]
fn stage_one_only_is_the_stage_one_learner() {
    let mut c = two_channel(small());
    c.algorithm = Algorithm::StageOneOnly;
    let run = train(&c, 4).unwrap();
    let direct = train_stage_one(&c, 4).unwrap();
    assert!(run.main.is_none());
    assert_eq!(run.aux, direct.aux);
    assert_eq!(run.metrics, direct.metrics);
}

#[test]
fn one_point_sweep_matches_a_two_stage_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c.seeds = vec![2];
    c.output_dir = dir.path().to_path_buf();
    let rows = run_sweep(&c, &[1e-3]).unwrap();
    let cell = c.with_lambda(1e-3).unwrap();
    let summary = summarize(&cell, &run_two_stage(&cell, 2).unwrap()).unwrap();
    assert_eq!(rows.len(), summary.len());
    for (r, s) in rows.iter().zip(&summary) {
        assert_eq!(r.seed, 2);
        assert_eq!(r.channel, s.channel);
        assert_eq!(r.mc_value, Some(s.mc_value));
        assert_eq!(r.ncis, Some(s.ncis));
    }
    let again = run_sweep(&c, &[1e-3]).unwrap();
    assert_eq!(rows, again);
}

#[test]
fn report_reads_every_trained_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c.seeds = vec![0, 1];
    c.output_dir = dir.path().to_path_buf();
    for algo in [Algorithm::Bc, Algorithm::Tscac] {
        c.algorithm = algo;
        run_training(&c).unwrap();
    }
    let report = build_report(&c, dir.path(), ReportMetric::McValue).unwrap();
    assert_eq!(report.baseline, "bc");
    let cell = report.cell("bc", "watch_time").unwrap();
    assert_eq!(cell.gap, tscac::eval::Gap::Percent(0.0));
    assert!(report.cell("tscac", "click").is_some());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tscac"))
}

fn write_config(dir: &Path, c: &ExperimentConfig) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(c).unwrap()).unwrap();
    p
}

#[test]
fn cli_train_is_deterministic_and_leaves_the_config_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let before = fs::read(&cfg).unwrap();
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .args(["--seed", "7", "--algo", "tscac", "--lambda", "0.001", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("algorithm,seed,lambda,channel"));
        outs.push(tree(&out));
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(before, fs::read(&cfg).unwrap());
}

#[test]
fn cli_simulate_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let out = dir.path().join("runs");
    let run = |args: &[&str]| {
        let o = bin().args(args).arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    run(&["simulate", "--seed", "3"]);
    let log = out.join("log_seed_3.jsonl");
    assert!(log.exists());
    run(&["train", "--algo", "bc", "--seed", "3"]);
    let policy = out.join("bc").join("seed_3").join("main.json");
    let eval = run(&["evaluate", "--log", log.to_str().unwrap(), "--policy", policy.to_str().unwrap()]);
    assert!(eval.starts_with("channel,ncis,dcg,sessions"));
    assert_eq!(eval.lines().count(), 5);
    let report = run(&["report"]);
    assert!(report.contains("watch_time"));
    assert!(out.join("report.csv").exists());
}

#[test]
fn cli_failures_print_one_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"training": {"iterations": 0}}"#).unwrap();
    let o = bin().args(["train", "--config"]).arg(&bad).output().unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    let line: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(line["error"], "config");
    assert!(line["message"].as_str().unwrap().contains("training.iterations"));

    let o = bin().args(["train", "--lambda", "-1"]).output().unwrap();
    assert!(!o.status.success());
    let line: serde_json::Value = serde_json::from_str(String::from_utf8(o.stderr).unwrap().trim()).unwrap();
    assert_eq!(line["error"], "config");

    let o = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let line: serde_json::Value = serde_json::from_str(String::from_utf8(o.stderr).unwrap().trim()).unwrap();
    assert_eq!(line["error"], "usage");

    let o = bin().args(["report", "--out"]).arg(dir.path().join("missing")).output().unwrap();
    assert!(!o.status.success());
    let line: serde_json::Value = serde_json::from_str(String::from_utf8(o.stderr).unwrap().trim()).unwrap();
    assert_eq!(line["error"], "insufficient_data");
}
