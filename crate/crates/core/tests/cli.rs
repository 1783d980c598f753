//! Command-line, config-file, and report behaviour.

use std::path::Path;
use std::process::{Command, Output};

use seqcal::harness::{self, Config, ExperimentId};

fn seqcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqcal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn workspace_file(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn shipped_config_matches_defaults() {
    let cfg = Config::load(&workspace_file("configs/default.toml")).unwrap();
    assert_eq!(cfg, Config::default());
}

#[test]
fn experiment_writes_summary_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqcal(&["experiment", "e7", "--out", path_str(dir.path()), "--check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("slope"));
    let summary = std::fs::read_to_string(dir.path().join("e7_summary.csv")).unwrap();
    assert!(summary.starts_with("experiment,metric,value,target,lower,upper,pass\n"));
    assert!(summary.contains("e7,slope,-0.500000,"));
    let plot = std::fs::read_to_string(dir.path().join("e7_delta_rag_vs_k.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 8);
}

#[test]
fn check_flag_fails_on_band_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[slack]\ndelta_cal = 0.2\n").unwrap();
    let args = ["experiment", "e8", "--config", path_str(&cfg), "--out", path_str(dir.path())];
    assert!(seqcal(&args).status.success());
    let mut strict = args.to_vec();
    strict.push("--check");
    assert!(!seqcal(&strict).status.success());
}

#[test]
fn bad_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!seqcal(&["experiment", "e3", "--out", path_str(dir.path())]).status.success());
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[e1]\nseedz = 3\n").unwrap();
    let out = seqcal(&["experiment", "e1", "--config", path_str(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seedz"));
}

#[test]
fn report_merges_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let d = path_str(dir.path());
    let empty = seqcal(&["report", "--out", d]);
    assert!(empty.status.success());
    assert!(String::from_utf8_lossy(&empty.stderr).contains("warning"));

    assert!(seqcal(&["experiment", "e7", "--out", d]).status.success());
    assert!(seqcal(&["experiment", "e8", "--out", d]).status.success());
    assert!(seqcal(&["report", "--out", d, "--check"]).status.success());
    let rep = harness::report(dir.path()).unwrap();
    let ids: std::collections::BTreeSet<_> = rep.rows.iter().map(|r| r.experiment.as_str()).collect();
    assert_eq!(ids.into_iter().collect::<Vec<_>>(), ["e7", "e8"]);
    let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + rep.rows.len());
}

#[test]
fn simulate_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "[end_to_end]\nhorizon = 800\nwindow = 400\nn_init = 400\nrefresh_period = 200\nstudent_refresh_step = 400\n",
    )
    .unwrap();
    let out = seqcal(&["simulate", "--config", path_str(&cfg), "--out", path_str(dir.path()), "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("simulate.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 800 + 1);
    assert_eq!(lines[0]["t"], 1);
    assert_eq!(lines[800]["steps"], 800);
}

#[test]
fn seeds_flag_and_trajectory_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = seqcal(&["experiment", "e1", "--seeds", "7", "--workers", "2", "--out", path_str(dir.path())]);
    assert!(out.status.success());
    let log = std::fs::read_to_string(dir.path().join("e1_trajectories.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2 * 7);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["group"], "boundary");
    assert_eq!(first["summary"]["steps"], 5000);
}

#[test]
fn summaries_are_byte_identical_across_worker_counts() {
    for id in [ExperimentId::E1, ExperimentId::E4, ExperimentId::E11, ExperimentId::Necessity] {
        let texts: Vec<String> = [1usize, 4]
            .iter()
            .map(|&w| {
                let mut cfg = Config::default();
                cfg.run.workers = w;
                cfg.set_seeds(id, 40);
                harness::summary_csv(&harness::run_experiment(id, &cfg).unwrap())
            })
            .collect();
        assert_eq!(texts[0], texts[1], "{id}");
    }
}

#[test]
fn master_seed_changes_results() {
    let mut a = Config::default();
    a.set_seeds(ExperimentId::E1, 50);
    let mut b = a.clone();
    b.run.master_seed += 1;
    let ra = harness::run_experiment(ExperimentId::E1, &a).unwrap();
    let rb = harness::run_experiment(ExperimentId::E1, &b).unwrap();
    assert_ne!(ra.trajectories, rb.trajectories);
}
