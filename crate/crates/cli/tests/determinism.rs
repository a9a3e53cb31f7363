//! Bytes out must be a pure function of the spec: identical across reruns
//! and across worker counts, with cell and trial order fixed.

use shift_lab::runner::{sweep_from_text, verify_theory_from_text};
use std::fs;
use std::path::{Path, PathBuf};

const SMALL_SWEEP: &str = "\
schedule.t = 40
attack.lambdas = 0.25, 0.5, 0.75
trials = 24
calib.n_null = 120
master_seed = 11
";

const SMALL_THEORY: &str = "\
schedule.t = 40
theory.pairs = 40
theory.stability_pairs = 60
theory.independence_pairs = 60
master_seed = 11
";

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("shift-lab-test-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    fs::read(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn rerunning_a_sweep_yields_byte_identical_outputs() {
    let a = scratch("sweep-a");
    let b = scratch("sweep-b");
    sweep_from_text(SMALL_SWEEP, &a, 2, false).unwrap();
    sweep_from_text(SMALL_SWEEP, &b, 2, false).unwrap();
    for file in ["sweep.csv", "sweep_baseline.csv", "summary.csv", "run_info.txt"] {
        assert_eq!(read(&a, file), read(&b, file), "{file} differs between reruns");
    }
    fs::remove_dir_all(&a).unwrap();
    fs::remove_dir_all(&b).unwrap();
}

#[test]
fn worker_count_does_not_change_sweep_bytes() {
    let a = scratch("sweep-w1");
    let b = scratch("sweep-w8");
    sweep_from_text(SMALL_SWEEP, &a, 1, false).unwrap();
    sweep_from_text(SMALL_SWEEP, &b, 8, false).unwrap();
    for file in ["sweep.csv", "sweep_baseline.csv", "summary.csv"] {
        assert_eq!(read(&a, file), read(&b, file), "{file} differs across worker counts");
    }
    fs::remove_dir_all(&a).unwrap();
    fs::remove_dir_all(&b).unwrap();
}

#[test]
fn theory_outputs_are_deterministic_across_workers_and_reruns() {
    let a = scratch("theory-a");
    let b = scratch("theory-b");
    let out_a = verify_theory_from_text(SMALL_THEORY, &a, 1).unwrap();
    let out_b = verify_theory_from_text(SMALL_THEORY, &b, 8).unwrap();
    // verdicts (not just bytes) must agree across worker counts
    assert_eq!(out_a.failures, out_b.failures);
    assert_eq!(read(&a, "theory.csv"), read(&b, "theory.csv"));
    fs::remove_dir_all(&a).unwrap();
    fs::remove_dir_all(&b).unwrap();
}

#[test]
fn plotdata_round_trips_the_sweep_files() {
    let dir = scratch("plotdata");
    sweep_from_text(SMALL_SWEEP, &dir, 4, false).unwrap();
    let plots = dir.join("plots");
    shift_lab::runner::execute_plotdata(&dir, &plots).unwrap();
    let asr = String::from_utf8(read(&plots, "asr_vs_lambda.csv")).unwrap();
    // header + 3 lambdas x 2 schemes x 2 variants
    let data_rows = asr.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(data_rows, 12);
    for line in asr.lines().skip(2) {
        let mean: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&mean), "ASR outside [0,1]: {line}");
    }
    let dist = String::from_utf8(read(&plots, "dist_vs_lambda.csv")).unwrap();
    let dist_rows = dist.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(dist_rows, 36);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn single_trial_cells_report_zero_stderr() {
    let dir = scratch("single-trial");
    let spec = "\
schedule.t = 30
attack.lambdas = 0.5
trials = 1
calib.n_null = 100
";
    sweep_from_text(spec, &dir, 2, false).unwrap();
    let plots = dir.join("plots");
    shift_lab::runner::execute_plotdata(&dir, &plots).unwrap();
    let dist = String::from_utf8(read(&plots, "dist_vs_lambda.csv")).unwrap();
    for line in dist.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let stderr: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(stderr, 0.0, "stderr must be 0 with one trial: {line}");
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn single_step_chain_checks_degenerate_but_complete() {
    // T = 1: every depth collapses to one step; all checks still run and
    // the report stays complete.
    let dir = scratch("t1");
    let spec = "\
schedule.t = 1
schedule.beta_start = 0.5
schedule.beta_end = 0.5
theory.pairs = 30
theory.stability_pairs = 50
theory.independence_pairs = 40
theory.lambdas = 1.0
master_seed = 3
";
    let outcome = verify_theory_from_text(spec, &dir, 2).unwrap();
    for name in ["one_step", "multi_step", "decoupling_pathwise", "decoupling_mean_square"] {
        assert!(
            outcome.rows.iter().any(|r| r.name == name),
            "missing row {name} in degenerate run"
        );
    }
    let stability_failures = outcome
        .rows
        .iter()
        .filter(|r| r.name.contains("step") && r.pass == shift_lab::report::PassState::Fail)
        .count();
    assert_eq!(stability_failures, 0);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn traces_are_written_on_request_only() {
    let dir = scratch("traces");
    let spec = "\
schedule.t = 30
attack.lambdas = 0.5
schemes = sign
trials = 2
calib.n_null = 100
";
    sweep_from_text(spec, &dir, 2, false).unwrap();
    assert!(!dir.join("traces").exists());
    let dir2 = scratch("traces-on");
    sweep_from_text(spec, &dir2, 2, true).unwrap();
    let cell = dir2.join("traces").join("sign_l0");
    for file in ["eps_w.csv", "x_w.csv", "x_a.csv", "trajectory.csv"] {
        assert!(cell.join(file).exists(), "missing {file}");
    }
    // trajectory rows: t_lambda + 1 latents, t from 15 down to 0
    let traj = fs::read_to_string(cell.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 16);
    assert!(traj.lines().next().unwrap().starts_with("15,"));
    fs::remove_dir_all(&dir).unwrap();
    fs::remove_dir_all(&dir2).unwrap();
}
