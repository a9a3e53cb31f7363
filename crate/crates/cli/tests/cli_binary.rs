//! Exit-code contract of the installed binary: 0 success, 1 config error,
//! 2 theory-check failures, 3 I/O trouble.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shift-lab"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("shift-lab-bin-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn sweep_succeeds_on_a_valid_spec() {
    let dir = scratch("ok");
    let spec = dir.join("tiny.spec");
    std::fs::write(&spec, "schedule.t = 20\nattack.lambdas = 0.5\ntrials = 5\ncalib.n_null = 100\n")
        .unwrap();
    let out = bin()
        .args(["sweep", spec.to_str().unwrap(), "--out"])
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("run/summary.csv").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_errors_exit_with_code_one() {
    let dir = scratch("config");
    let spec = dir.join("bad.spec");
    std::fs::write(&spec, "attack.lambdas = \n").unwrap();
    let out = bin().args(["sweep", spec.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lambdas"), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn unknown_key_reports_its_line_number() {
    let dir = scratch("line");
    let spec = dir.join("bad.spec");
    std::fs::write(&spec, "trials = 5\nnot.a.key = 1\n").unwrap();
    let out = bin().args(["sweep", spec.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn theory_failures_exit_with_code_two() {
    let dir = scratch("deflated");
    let spec = dir.join("deflated.spec");
    std::fs::write(
        &spec,
        "schedule.t = 100\nscore.kind = mixture\nschemes = sign\n\
         theory.lipschitz_scale = 0.5\ntheory.pairs = 30\ntheory.stability_pairs = 150\n\
         theory.independence_pairs = 60\ntheory.lipschitz_trials = 800\ntheory.lambdas = 0.5\n",
    )
    .unwrap();
    let out = bin()
        .args(["verify-theory", spec.to_str().unwrap(), "--out"])
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.join("run/theory.csv").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_run_dir_exits_with_code_three() {
    let out = bin().args(["plotdata", "/definitely/not/a/run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}
