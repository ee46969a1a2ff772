use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn twostep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twostep"))
        .args(args)
        .current_dir(dir)
        .env_remove("TWOSTEP_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SYNC_RUN: &[&str] = &[
    "run",
    "--variant",
    "task",
    "--n",
    "6",
    "--e",
    "2",
    "--f",
    "2",
    "--schedule",
    "sync",
    "--faulty",
    "p5,p6",
    "--proposals",
    "1,2,0,2,_,_",
    "--trace",
    "out.trace",
];

#[test]
fn sync_run_writes_trace_that_replays() {
    let dir = TempDir::new().unwrap();
    let out = twostep(dir.path(), SYNC_RUN);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("decide p2 2 at 20"));
    let trace = fs::read_to_string(dir.path().join("out.trace")).unwrap();
    assert!(trace.starts_with("#twostep-trace v1\n"));
    let out = twostep(dir.path(), &["replay", "out.trace"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let args = [
        "run",
        "--variant",
        "object",
        "--e",
        "2",
        "--f",
        "2",
        "--schedule",
        "random",
        "--seed",
        "9",
        "--gst",
        "80",
        "--calls",
        "0:p1:1,12:p4:2",
        "--crashes",
        "30:p2",
        "--trace",
        "r.trace",
    ];
    let first = twostep(dir.path(), &args);
    let trace = fs::read(dir.path().join("r.trace")).unwrap();
    let second = twostep(dir.path(), &args);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(trace, fs::read(dir.path().join("r.trace")).unwrap());
}

#[test]
fn check_at_object_bound_passes() {
    let dir = TempDir::new().unwrap();
    let out = twostep(dir.path(), &["check", "--variant", "object", "--e", "2", "--f", "2"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("property=two-step-object:object-n5-e2-f2 status=pass"));
    assert!(text.contains("property=fast-path-recovery:object-n5-e2-f2 status=pass"));
}

#[test]
fn check_with_tightness_finds_counterexample_below_bound() {
    let dir = TempDir::new().unwrap();
    let out = twostep(
        dir.path(),
        &["check", "--variant", "task", "--e", "2", "--f", "2", "--tightness"],
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("property=recovery-tightness:task-n6-e2-f2 status=pass"));
}

#[test]
fn oracle_below_bound_prints_counterexample() {
    let dir = TempDir::new().unwrap();
    let out = twostep(
        dir.path(),
        &[
            "oracle",
            "--variant",
            "task",
            "--n",
            "5",
            "--e",
            "2",
            "--f",
            "2",
            "--allow-below-bound",
            "--out-dir",
            "w",
        ],
    );
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.contains("p1 fast-decided"));
    assert!(text.contains("witness: w/witness-oracle-task-n5.txt"));
    assert!(dir.path().join("w/witness-oracle-task-n5.txt").exists());
}

#[test]
fn below_bound_without_flag_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = twostep(
        dir.path(),
        &["oracle", "--variant", "task", "--n", "5", "--e", "2", "--f", "2"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("below the bound"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.toml"), "variant = \"task\"\ncolour = 3\n").unwrap();
    for args in [
        vec!["run", "--bogus"],
        vec!["check", "--e", "2"],
        vec!["run", "--config", "missing.toml"],
        vec!["run", "--config", "bad.toml"],
        vec![
            "run",
            "--variant",
            "task",
            "--e",
            "2",
            "--f",
            "1",
            "--proposals",
            "1,1,1",
        ],
        vec!["replay", "missing.trace"],
    ] {
        assert_eq!(code(&twostep(dir.path(), &args)), 2, "{args:?}");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "variant = \"task\"\nn = 6\ne = 2\nf = 2\nschedule = \"sync\"\nfaulty = \"p5,p6\"\nproposals = \"1,2,0,2,_,_\"\n",
    )
    .unwrap();
    let out = twostep(dir.path(), &["run", "--config", "run.toml"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("task n=6 e=2 f=2"));
    let out = twostep(
        dir.path(),
        &[
            "run",
            "--config",
            "run.toml",
            "--faulty",
            "p1,p6",
            "--proposals",
            "_,2,0,2,1,_",
        ],
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("decide p2 2 at 20"));
}

#[test]
fn fuzz_witness_lands_in_env_dir_and_reproduces() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_twostep"))
        .args([
            "fuzz",
            "--variant",
            "task",
            "--e",
            "1",
            "--f",
            "1",
            "--seeds",
            "0..500",
            "--mutation",
            "drop-fast-val-guard",
        ])
        .current_dir(dir.path())
        .env("TWOSTEP_OUT_DIR", "found")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    let witness = dir.path().join("found/witness-fuzz-task-n3.toml");
    assert!(stdout(&out).contains("witness: found/witness-fuzz-task-n3.toml"));
    assert!(witness.exists());
    let again = twostep(dir.path(), &["run", "--scenario", "found/witness-fuzz-task-n3.toml"]);
    assert_eq!(code(&again), 1);
}

#[test]
fn clean_fuzz_passes() {
    let dir = TempDir::new().unwrap();
    let out = twostep(
        dir.path(),
        &[
            "fuzz",
            "--variant",
            "object",
            "--e",
            "1",
            "--f",
            "1",
            "--seeds",
            "0..50",
        ],
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("property=fuzz status=pass runs=100"));
}

#[test]
fn tampered_trace_diverges() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&twostep(dir.path(), SYNC_RUN)), 0);
    let path = dir.path().join("out.trace");
    let text = fs::read_to_string(&path).unwrap().replace("decide p2 2", "decide p2 1");
    fs::write(&path, text).unwrap();
    let out = twostep(dir.path(), &["replay", "out.trace"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("replay diverges at line"));
}
