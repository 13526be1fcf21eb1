//! Black-box tests of the compiled binary: artifact layout, exit codes,
//! flag validation, reproducibility, and the aggregate flow.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_hashsimp")
}

fn write_dataset(dir: &Path, rows: usize) -> PathBuf {
    let mut text = String::from("a,b,c,y\n");
    for i in 0..rows {
        let a = (i as f64) * 0.11 - 3.0;
        let b = ((i * 13) % 17) as f64 * 0.5 - 4.0;
        let c = ((i * 5) % 7) as f64 - 3.0;
        text.push_str(&format!("{a},{b},{c},{}\n", a * b + 2.0 * c));
    }
    let path = dir.join("toy.csv");
    fs::write(&path, text).unwrap();
    path
}

fn run_binary(dir: &Path, args: &[&str]) -> Output {
    Command::new(binary())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary starts")
}

const SMALL: [&str; 10] = [
    "--pop-size",
    "10",
    "--generations",
    "3",
    "--max-depth",
    "4",
    "--max-size",
    "16",
    "--hash-bits",
    "64",
];

fn small_run(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--dataset", "toy.csv", "--out-dir", "out"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    run_binary(dir, &args)
}

#[test]
fn single_run_writes_the_four_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 60);
    let output = small_run(dir.path(), &["--strategy", "top_down", "--seed", "3"]);
    assert!(output.status.success(), "{output:?}");

    let run_dir = dir.path().join("out/toy_top_down_seed3");
    for artifact in [
        "run_log.csv",
        "summary.csv",
        "final_model.txt",
        "table_dump.txt",
    ] {
        assert!(run_dir.join(artifact).is_file(), "missing {artifact}");
    }
    let log = fs::read_to_string(run_dir.join("run_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(
        lines[0],
        "generation,best_val_mse,n_simplifications,elapsed_seconds"
    );
    assert_eq!(lines.len(), 4, "header plus one row per generation");
    let summary = fs::read_to_string(run_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with(
        "dataset,strategy,seed,test_mse,size,complexity,\
         total_simplifications,table_entries,table_expressions,wall_seconds"
            .replace(' ', "")
            .as_str()
    ));
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("toy,top_down,3,"));
    let dump = fs::read_to_string(run_dir.join("table_dump.txt")).unwrap();
    assert!(dump.lines().last().unwrap().starts_with("entries="));
}

#[test]
fn strategy_none_leaves_the_dump_empty() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 60);
    let output = small_run(dir.path(), &["--strategy", "none", "--seed", "0"]);
    assert!(output.status.success(), "{output:?}");
    let dump = dir.path().join("out/toy_none_seed0/table_dump.txt");
    assert_eq!(fs::read_to_string(dump).unwrap(), "");
}

#[test]
fn conflicting_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 60);
    let both_strategies = small_run(
        dir.path(),
        &["--strategy", "none", "--strategies", "none,bottom_up"],
    );
    assert_eq!(
        both_strategies.status.code(),
        Some(2),
        "{both_strategies:?}"
    );
    let both_seeds = small_run(dir.path(), &["--seed", "0", "--seeds", "0..2"]);
    assert_eq!(both_seeds.status.code(), Some(2), "{both_seeds:?}");
}

#[test]
fn invalid_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 60);
    for bad in [
        vec!["--strategy", "sideways"],
        vec!["--seeds", "9..1"],
        vec!["--seeds", "abc"],
        vec!["--pop-size", "1"],
    ] {
        let output = small_run(dir.path(), &bad);
        assert_eq!(output.status.code(), Some(2), "args {bad:?}: {output:?}");
    }
}

#[test]
fn dataset_problems_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run_binary(
        dir.path(),
        &[
            "run",
            "--dataset",
            "absent.csv",
            "--strategy",
            "none",
            "--seed",
            "0",
        ],
    );
    assert_eq!(missing.status.code(), Some(1), "{missing:?}");

    fs::write(
        dir.path().join("toy.csv"),
        "a,b,y\n1.0,oops,3.0\n2.0,1.0,4.0\n",
    )
    .unwrap();
    let corrupt = small_run(dir.path(), &["--strategy", "none", "--seed", "0"]);
    assert_eq!(corrupt.status.code(), Some(1), "{corrupt:?}");
    let stderr = String::from_utf8_lossy(&corrupt.stderr);
    assert!(
        stderr.contains("oops"),
        "names the offending value: {stderr}"
    );
}

#[test]
fn reruns_with_identical_flags_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 60);
    let args = ["--strategy", "bottom_up", "--seed", "5"];
    assert!(small_run(dir.path(), &args).status.success());
    let run_dir = dir.path().join("out/toy_bottom_up_seed5");
    let log = fs::read(run_dir.join("run_log.csv")).unwrap();
    let model = fs::read(run_dir.join("final_model.txt")).unwrap();
    let summary = fs::read(run_dir.join("summary.csv")).unwrap();
    let dump = fs::read(run_dir.join("table_dump.txt")).unwrap();
    assert!(small_run(dir.path(), &args).status.success());
    assert_eq!(fs::read(run_dir.join("run_log.csv")).unwrap(), log);
    assert_eq!(fs::read(run_dir.join("final_model.txt")).unwrap(), model);
    assert_eq!(fs::read(run_dir.join("summary.csv")).unwrap(), summary);
    assert_eq!(fs::read(run_dir.join("table_dump.txt")).unwrap(), dump);
}

#[test]
fn aggregate_pairs_runs_and_reports_medians() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 60);
    let output = small_run(
        dir.path(),
        &["--strategies", "none,bottom_up,top_down", "--seeds", "0..1"],
    );
    assert!(output.status.success(), "{output:?}");

    let aggregated = run_binary(dir.path(), &["aggregate", "out"]);
    assert!(aggregated.status.success(), "{aggregated:?}");
    let stdout = String::from_utf8_lossy(&aggregated.stdout);
    assert!(stdout.contains("aggregated 6 runs"), "{stdout}");
    let stderr = String::from_utf8_lossy(&aggregated.stderr);
    assert!(!stderr.contains("unmatched"), "{stderr}");

    let change = fs::read_to_string(dir.path().join("out/relative_change.csv")).unwrap();
    assert_eq!(change.lines().count(), 1 + 4);
    let summary = fs::read_to_string(dir.path().join("out/aggregate_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("none,2,"));
    assert!(lines[2].starts_with("bottom_up,2,"));
    assert!(lines[3].starts_with("top_down,2,"));
}

#[test]
fn aggregating_nothing_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("out")).unwrap();
    let output = run_binary(dir.path(), &["aggregate", "out"]);
    assert_eq!(output.status.code(), Some(1), "{output:?}");
}

#[test]
fn thread_cap_variable_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 60);
    let output = Command::new(binary())
        .current_dir(dir.path())
        .env("HASHSIMP_THREADS", "1")
        .args(["run", "--dataset", "toy.csv", "--out-dir", "out"])
        .args(SMALL)
        .args(["--strategies", "none,bottom_up", "--seeds", "0..1"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    assert_eq!(fs::read_dir(dir.path().join("out")).unwrap().count(), 4);
}

#[test]
fn smoke_configuration_finishes_quickly_on_moderate_data() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 300);
    let started = Instant::now();
    let output = run_binary(
        dir.path(),
        &[
            "run",
            "--dataset",
            "toy.csv",
            "--out-dir",
            "out",
            "--generations",
            "5",
            "--pop-size",
            "10",
            "--seeds",
            "0",
        ],
    );
    assert!(output.status.success(), "{output:?}");
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "smoke run took {elapsed:?}, budget is 30 s"
    );
    for strategy in ["none", "bottom_up", "top_down"] {
        assert!(dir
            .path()
            .join(format!("out/toy_{strategy}_seed0"))
            .join("summary.csv")
            .is_file());
    }
}
