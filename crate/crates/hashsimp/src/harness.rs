//! Experiment orchestration: run the engine over a grid of strategies and
//! seeds, write per-run artifacts, and aggregate paired relative changes
//! against the no-simplification baseline.
//!
//! Each run owns a directory `<dataset>_<strategy>_seed<k>/` under the
//! output root containing exactly four files: `run_log.csv` (one row per
//! generation), `summary.csv` (a single row of end-of-run metrics),
//! `final_model.txt` (the best model in parseable text form), and
//! `table_dump.txt` (the simplification table; empty when the strategy is
//! `none`). Runs for distinct (strategy, seed) pairs execute in parallel
//! worker threads — capped by the `HASHSIMP_THREADS` environment variable —
//! and never share output files.
//!
//! Timing columns are zeroed by default ([`TimingMode::Stable`]) so that
//! re-running a configuration overwrites every artifact byte for byte;
//! [`TimingMode::Wall`] records real seconds instead and is the only source
//! of nondeterminism in the outputs.

use crate::data::{self, DataError, Dataset};
use crate::gp::{evolve, GpConfig, GpError, Strategy};
use rayon::prelude::*;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub const RUN_LOG_HEADER: [&str; 4] = [
    "generation",
    "best_val_mse",
    "n_simplifications",
    "elapsed_seconds",
];
pub const SUMMARY_HEADER: [&str; 10] = [
    "dataset",
    "strategy",
    "seed",
    "test_mse",
    "size",
    "complexity",
    "total_simplifications",
    "table_entries",
    "table_expressions",
    "wall_seconds",
];
pub const RELATIVE_CHANGE_HEADER: [&str; 6] = [
    "dataset",
    "seed",
    "strategy",
    "delta_size_pct",
    "delta_complexity_pct",
    "delta_test_mse_pct",
];
pub const AGGREGATE_SUMMARY_HEADER: [&str; 8] = [
    "strategy",
    "runs",
    "median_test_mse",
    "median_size",
    "median_complexity",
    "median_delta_size_pct",
    "median_delta_complexity_pct",
    "median_delta_test_mse_pct",
];

/// How timing columns are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingMode {
    /// Write `0.000` everywhere so identical configurations produce
    /// byte-identical artifacts.
    Stable,
    /// Write real wall-clock seconds (measured around the evolve call
    /// only); artifacts then differ between repetitions.
    Wall,
}

/// A full experiment: one dataset, a strategy × seed grid, one engine
/// configuration.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub dataset_path: PathBuf,
    /// Target column name; the last column when absent.
    pub target: Option<String>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    /// Engine configuration; `rng_seed` is overwritten by each run's seed.
    pub base_config: GpConfig,
    pub out_dir: PathBuf,
    /// Show only this many leading key bits in table dumps.
    pub truncate_hash: Option<usize>,
    pub timing: TimingMode,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("could not access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("could not process {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path} is not a run summary (unexpected header or row shape)")]
    BadSummary { path: PathBuf },
    #[error("no run summaries found under {0}")]
    NothingToAggregate(PathBuf),
    #[error("could not start worker pool: {0}")]
    Threads(String),
}

/// One row of a per-run `summary.csv`, also the unit the aggregator works
/// on.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub strategy: String,
    pub seed: u64,
    pub test_mse: f64,
    pub size: u64,
    pub complexity: u64,
    pub total_simplifications: u64,
    pub table_entries: u64,
    pub table_expressions: u64,
    pub wall_seconds: f64,
}

/// What [`aggregate`] produced.
#[derive(Debug)]
pub struct AggregateReport {
    pub relative_change_path: PathBuf,
    pub aggregate_summary_path: PathBuf,
    /// Runs that could not be paired with a `none` baseline, described one
    /// per line; they are skipped, not fatal.
    pub unmatched: Vec<String>,
    pub n_runs: usize,
}

/// Parses a seed argument: either a single seed `k` or an inclusive
/// range `a..b` covering both endpoints (`0..29` names thirty seeds).
pub fn parse_seed_spec(spec: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = spec.split_once("..") {
        let first: u64 = a
            .trim()
            .parse()
            .map_err(|_| format!("invalid seed range start {a:?} in {spec:?}"))?;
        let last: u64 = b
            .trim()
            .parse()
            .map_err(|_| format!("invalid seed range end {b:?} in {spec:?}"))?;
        if last < first {
            return Err(format!("empty seed range {spec:?}"));
        }
        Ok((first..=last).collect())
    } else {
        spec.trim()
            .parse()
            .map(|k| vec![k])
            .map_err(|_| format!("invalid seed {spec:?}"))
    }
}

/// Comma-separated strategy names, e.g. `none,bottom_up,top_down`.
pub fn parse_strategy_list(spec: &str) -> Result<Vec<Strategy>, String> {
    spec.split(',')
        .map(|name| {
            let name = name.trim();
            Strategy::from_name(name).ok_or_else(|| {
                format!("unknown strategy {name:?}; expected one of none, bottom_up, top_down")
            })
        })
        .collect()
}

/// The dataset's display name: its file stem.
pub fn dataset_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_at(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_at(path))?;
    for row in rows {
        writer.write_record(row).map_err(csv_at(path))?;
    }
    writer.flush().map_err(io_at(path))
}

fn header_row(header: &[&str]) -> Vec<String> {
    header.iter().map(|s| s.to_string()).collect()
}

/// Loads the dataset once, then executes every (strategy, seed) pair of
/// the plan in parallel. Returns the run directories in grid order.
pub fn run_experiments(plan: &ExperimentPlan) -> Result<Vec<PathBuf>, HarnessError> {
    let dataset = data::load_csv(&plan.dataset_path, plan.target.as_deref())?;
    let label = dataset_label(&plan.dataset_path);
    fs::create_dir_all(&plan.out_dir).map_err(io_at(&plan.out_dir))?;
    let jobs: Vec<(Strategy, u64)> = plan
        .strategies
        .iter()
        .flat_map(|s| plan.seeds.iter().map(move |k| (*s, *k)))
        .collect();
    let pool = worker_pool()?;
    pool.install(|| {
        jobs.par_iter()
            .map(|(strategy, seed)| execute_run(&dataset, &label, *strategy, *seed, plan))
            .collect()
    })
}

/// Builds the worker pool, honoring `HASHSIMP_THREADS` when it parses as a
/// positive integer (a malformed value is reported and ignored).
fn worker_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("HASHSIMP_THREADS") {
        match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => builder = builder.num_threads(n),
            _ => eprintln!("ignoring HASHSIMP_THREADS={raw:?}: not a positive integer"),
        }
    }
    builder
        .build()
        .map_err(|e| HarnessError::Threads(e.to_string()))
}

/// Executes one run and writes its four artifacts. The wall-clock
/// measurement brackets the evolve call only.
pub fn execute_run(
    dataset: &Dataset,
    label: &str,
    strategy: Strategy,
    seed: u64,
    plan: &ExperimentPlan,
) -> Result<PathBuf, HarnessError> {
    let split = data::prepare(dataset, seed)?;
    let mut config = plan.base_config.clone();
    config.rng_seed = seed;
    let started = Instant::now();
    let result = evolve(&config, &split, strategy)?;
    let wall_seconds = started.elapsed().as_secs_f64();

    for warning in &result.warnings {
        eprintln!(
            "warning [{label} {} seed {seed}]: {warning}",
            strategy.name()
        );
    }

    let dir = plan
        .out_dir
        .join(format!("{label}_{}_seed{seed}", strategy.name()));
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;

    let elapsed_cell = |real: f64| match plan.timing {
        TimingMode::Stable => "0.000".to_string(),
        TimingMode::Wall => format!("{real:.3}"),
    };

    let mut log_rows = vec![header_row(&RUN_LOG_HEADER)];
    for record in &result.log {
        log_rows.push(vec![
            record.generation.to_string(),
            record.best_val_mse.to_string(),
            record.n_simplifications.to_string(),
            elapsed_cell(record.elapsed_seconds),
        ]);
    }
    write_csv(&dir.join("run_log.csv"), &log_rows)?;

    let (entries, expressions, simplifications) = match &result.table {
        Some(table) => (
            table.total_entries() as u64,
            table.total_expressions() as u64,
            table.simplifications_performed() as u64,
        ),
        None => (0, 0, 0),
    };
    let summary_rows = vec![
        header_row(&SUMMARY_HEADER),
        vec![
            label.to_string(),
            strategy.name().to_string(),
            seed.to_string(),
            result.test_mse.to_string(),
            result.best.size.to_string(),
            result.best.tree.complexity().to_string(),
            simplifications.to_string(),
            entries.to_string(),
            expressions.to_string(),
            elapsed_cell(wall_seconds),
        ],
    ];
    write_csv(&dir.join("summary.csv"), &summary_rows)?;

    let model_path = dir.join("final_model.txt");
    fs::write(&model_path, format!("{}\n", result.best.tree)).map_err(io_at(&model_path))?;

    let dump_path = dir.join("table_dump.txt");
    let dump = match &result.table {
        Some(table) => table.dump(plan.truncate_hash),
        None => String::new(),
    };
    fs::write(&dump_path, dump).map_err(io_at(&dump_path))?;

    Ok(dir)
}

fn strategy_order(name: &str) -> usize {
    match name {
        "none" => 0,
        "bottom_up" => 1,
        "top_down" => 2,
        _ => 3,
    }
}

fn parse_summary_file(path: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_at(path))?;
    let header_ok = reader
        .headers()
        .map(|h| h.iter().eq(SUMMARY_HEADER))
        .unwrap_or(false);
    if !header_ok {
        return Err(HarnessError::BadSummary {
            path: path.to_path_buf(),
        });
    }
    let bad = || HarnessError::BadSummary {
        path: path.to_path_buf(),
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_at(path))?;
        if record.len() != SUMMARY_HEADER.len() {
            return Err(bad());
        }
        let field = |i: usize| record.get(i).unwrap_or_default();
        rows.push(SummaryRow {
            dataset: field(0).to_string(),
            strategy: field(1).to_string(),
            seed: field(2).parse().map_err(|_| bad())?,
            test_mse: field(3).parse().map_err(|_| bad())?,
            size: field(4).parse().map_err(|_| bad())?,
            complexity: field(5).parse().map_err(|_| bad())?,
            total_simplifications: field(6).parse().map_err(|_| bad())?,
            table_entries: field(7).parse().map_err(|_| bad())?,
            table_expressions: field(8).parse().map_err(|_| bad())?,
            wall_seconds: field(9).parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Collects every `*/summary.csv` under `results_dir`, in path order.
fn collect_summaries(results_dir: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut run_dirs: Vec<PathBuf> = fs::read_dir(results_dir)
        .map_err(io_at(results_dir))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("summary.csv").is_file())
        .collect();
    run_dirs.sort();
    let mut rows = Vec::new();
    for dir in run_dirs {
        rows.extend(parse_summary_file(&dir.join("summary.csv"))?);
    }
    Ok(rows)
}

/// Percentage change relative to a baseline; undefined when the baseline
/// is zero and the value is not.
fn delta_pct(baseline: f64, value: f64) -> Option<f64> {
    if baseline != 0.0 {
        Some(100.0 * (value - baseline) / baseline)
    } else if value == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

fn cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone)]
struct PairedDeltas {
    strategy: String,
    size: Option<f64>,
    complexity: Option<f64>,
    test_mse: Option<f64>,
}

/// Pairs each run with the `none` run of the same dataset and seed, writes
/// `relative_change.csv` (one row per paired run) and
/// `aggregate_summary.csv` (one row per strategy, baseline first) at the
/// root of `results_dir`, and reports runs that had no baseline.
pub fn aggregate(results_dir: &Path) -> Result<AggregateReport, HarnessError> {
    let mut rows = collect_summaries(results_dir)?;
    if rows.is_empty() {
        return Err(HarnessError::NothingToAggregate(results_dir.to_path_buf()));
    }
    rows.sort_by(|a, b| {
        (
            a.dataset.as_str(),
            a.seed,
            strategy_order(&a.strategy),
            a.strategy.as_str(),
        )
            .cmp(&(
                b.dataset.as_str(),
                b.seed,
                strategy_order(&b.strategy),
                b.strategy.as_str(),
            ))
    });

    let baselines: HashMap<(&str, u64), &SummaryRow> = rows
        .iter()
        .filter(|r| r.strategy == "none")
        .map(|r| ((r.dataset.as_str(), r.seed), r))
        .collect();

    let mut unmatched = Vec::new();
    let mut change_rows = vec![header_row(&RELATIVE_CHANGE_HEADER)];
    let mut paired: Vec<PairedDeltas> = Vec::new();
    for row in rows.iter().filter(|r| r.strategy != "none") {
        let Some(baseline) = baselines.get(&(row.dataset.as_str(), row.seed)) else {
            unmatched.push(format!(
                "dataset={} seed={} strategy={}: no 'none' baseline",
                row.dataset, row.seed, row.strategy
            ));
            continue;
        };
        let deltas = PairedDeltas {
            strategy: row.strategy.clone(),
            size: delta_pct(baseline.size as f64, row.size as f64),
            complexity: delta_pct(baseline.complexity as f64, row.complexity as f64),
            test_mse: delta_pct(baseline.test_mse, row.test_mse),
        };
        change_rows.push(vec![
            row.dataset.clone(),
            row.seed.to_string(),
            row.strategy.clone(),
            cell(deltas.size),
            cell(deltas.complexity),
            cell(deltas.test_mse),
        ]);
        paired.push(deltas);
    }

    let mut strategies: Vec<String> = Vec::new();
    for row in &rows {
        if !strategies.contains(&row.strategy) {
            strategies.push(row.strategy.clone());
        }
    }
    strategies
        .sort_by(|a, b| (strategy_order(a), a.as_str()).cmp(&(strategy_order(b), b.as_str())));

    let mut summary_rows = vec![header_row(&AGGREGATE_SUMMARY_HEADER)];
    for strategy in &strategies {
        let runs: Vec<&SummaryRow> = rows.iter().filter(|r| &r.strategy == strategy).collect();
        let med = |mut values: Vec<f64>| median(&mut values);
        let deltas: Vec<&PairedDeltas> =
            paired.iter().filter(|d| &d.strategy == strategy).collect();
        let delta_median = |pick: fn(&PairedDeltas) -> Option<f64>| {
            med(deltas.iter().filter_map(|d| pick(d)).collect())
        };
        summary_rows.push(vec![
            strategy.clone(),
            runs.len().to_string(),
            cell(med(runs.iter().map(|r| r.test_mse).collect())),
            cell(med(runs.iter().map(|r| r.size as f64).collect())),
            cell(med(runs.iter().map(|r| r.complexity as f64).collect())),
            cell(delta_median(|d| d.size)),
            cell(delta_median(|d| d.complexity)),
            cell(delta_median(|d| d.test_mse)),
        ]);
    }

    let relative_change_path = results_dir.join("relative_change.csv");
    write_csv(&relative_change_path, &change_rows)?;
    let aggregate_summary_path = results_dir.join("aggregate_summary.csv");
    write_csv(&aggregate_summary_path, &summary_rows)?;
    Ok(AggregateReport {
        relative_change_path,
        aggregate_summary_path,
        unmatched,
        n_runs: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn small_plan(dir: &Path) -> ExperimentPlan {
        ExperimentPlan {
            dataset_path: dir.join("toy.csv"),
            target: None,
            strategies: vec![Strategy::None, Strategy::BottomUp, Strategy::TopDown],
            seeds: vec![0, 1],
            base_config: GpConfig {
                pop_size: 12,
                generations: 3,
                max_depth: 4,
                max_size: 16,
                lm_max_iter: 4,
                ..GpConfig::default()
            },
            out_dir: dir.join("runs"),
            truncate_hash: Some(16),
            timing: TimingMode::Stable,
        }
    }

    fn write_toy_dataset(dir: &Path) {
        let mut text = String::from("a,b,t\n");
        for i in 0..40 {
            let a = i as f64 * 0.3 - 6.0;
            let b = ((i * 7) % 11) as f64 - 5.0;
            text.push_str(&format!("{a},{b},{}\n", 2.0 * a + b + 1.0));
        }
        fs::write(dir.join("toy.csv"), text).unwrap();
    }

    #[test]
    fn seed_specs_cover_singles_and_inclusive_ranges() {
        assert_eq!(parse_seed_spec("7").unwrap(), vec![7]);
        assert_eq!(parse_seed_spec(" 3 ").unwrap(), vec![3]);
        assert_eq!(parse_seed_spec("0..29").unwrap().len(), 30);
        assert_eq!(parse_seed_spec("3..3").unwrap(), vec![3]);
        assert_eq!(parse_seed_spec("2..4").unwrap(), vec![2, 3, 4]);
        assert!(parse_seed_spec("5..2").is_err());
        assert!(parse_seed_spec("x").is_err());
        assert!(parse_seed_spec("1..y").is_err());
        assert!(parse_seed_spec("-1").is_err());
    }

    #[test]
    fn strategy_lists_parse_by_name() {
        assert_eq!(
            parse_strategy_list("none,bottom_up,top_down").unwrap(),
            vec![Strategy::None, Strategy::BottomUp, Strategy::TopDown]
        );
        assert_eq!(
            parse_strategy_list(" bottom_up ").unwrap(),
            vec![Strategy::BottomUp]
        );
        assert!(parse_strategy_list("nope").is_err());
        assert!(parse_strategy_list("none,,top_down").is_err());
    }

    #[test]
    fn dataset_labels_are_file_stems() {
        assert_eq!(dataset_label(Path::new("/tmp/yacht.csv")), "yacht");
        assert_eq!(dataset_label(Path::new("toy.csv")), "toy");
    }

    #[test]
    fn median_handles_odd_even_and_empty() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut [5.0]), Some(5.0));
        assert_eq!(median(&mut Vec::new()), None);
    }

    #[test]
    fn percentage_deltas_match_hand_arithmetic() {
        assert_eq!(delta_pct(10.0, 8.0), Some(-20.0));
        assert_eq!(delta_pct(10.0, 10.0), Some(0.0));
        assert_eq!(delta_pct(4.0, 5.0), Some(25.0));
        assert_eq!(delta_pct(0.0, 0.0), Some(0.0));
        assert_eq!(delta_pct(0.0, 1.0), None);
    }

    #[test]
    fn experiments_write_every_artifact_and_aggregate_pairs_by_seed() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(dir.path());
        let plan = small_plan(dir.path());
        let run_dirs = run_experiments(&plan).unwrap();
        assert_eq!(run_dirs.len(), 6);

        for run_dir in &run_dirs {
            for artifact in [
                "run_log.csv",
                "summary.csv",
                "final_model.txt",
                "table_dump.txt",
            ] {
                assert!(run_dir.join(artifact).is_file(), "{run_dir:?}/{artifact}");
            }
            let log = fs::read_to_string(run_dir.join("run_log.csv")).unwrap();
            let lines: Vec<&str> = log.lines().collect();
            assert_eq!(lines.len(), 1 + 3, "header plus one row per generation");
            assert_eq!(
                lines[0],
                "generation,best_val_mse,n_simplifications,elapsed_seconds"
            );
            assert!(lines[1].starts_with("0,"));
            assert!(lines.iter().skip(1).all(|l| l.ends_with(",0.000")));
            let model = fs::read_to_string(run_dir.join("final_model.txt")).unwrap();
            crate::expr::parse(model.trim_end()).expect("model text parses");
        }

        let none_dir = plan.out_dir.join("toy_none_seed0");
        assert_eq!(
            fs::read_to_string(none_dir.join("table_dump.txt")).unwrap(),
            ""
        );
        let none_summary = fs::read_to_string(none_dir.join("summary.csv")).unwrap();
        let row = none_summary.lines().nth(1).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "toy");
        assert_eq!(fields[1], "none");
        assert_eq!(fields[2], "0");
        assert_eq!(fields[6], "0", "no substitutions without a table");
        assert_eq!((fields[7], fields[8]), ("0", "0"), "no table, no entries");

        let bu_dump = fs::read_to_string(
            plan.out_dir
                .join("toy_bottom_up_seed0")
                .join("table_dump.txt"),
        )
        .unwrap();
        assert!(bu_dump.lines().last().unwrap().starts_with("entries="));
        assert!(bu_dump.contains("..."), "keys are truncated to 16 bits");

        let report = aggregate(&plan.out_dir).unwrap();
        assert_eq!(report.n_runs, 6);
        assert!(report.unmatched.is_empty());
        let change = fs::read_to_string(&report.relative_change_path).unwrap();
        let change_lines: Vec<&str> = change.lines().collect();
        assert_eq!(
            change_lines[0],
            "dataset,seed,strategy,delta_size_pct,delta_complexity_pct,delta_test_mse_pct"
        );
        assert_eq!(change_lines.len(), 1 + 4, "two strategies times two seeds");
        assert!(change_lines[1].starts_with("toy,0,bottom_up,"));
        assert!(change_lines[2].starts_with("toy,0,top_down,"));
        assert!(change_lines[3].starts_with("toy,1,bottom_up,"));

        let summary = fs::read_to_string(&report.aggregate_summary_path).unwrap();
        let summary_lines: Vec<&str> = summary.lines().collect();
        assert_eq!(
            summary_lines[0],
            "strategy,runs,median_test_mse,median_size,median_complexity,\
             median_delta_size_pct,median_delta_complexity_pct,median_delta_test_mse_pct"
                .replace(" ", "")
        );
        assert_eq!(summary_lines.len(), 4);
        assert!(summary_lines[1].starts_with("none,2,"));
        assert!(summary_lines[2].starts_with("bottom_up,2,"));
        assert!(summary_lines[3].starts_with("top_down,2,"));
        let none_fields: Vec<&str> = summary_lines[1].split(',').collect();
        assert_eq!(none_fields[5..8], ["", "", ""], "baseline has no deltas");
        let bu_fields: Vec<&str> = summary_lines[2].split(',').collect();
        for f in &bu_fields[5..8] {
            f.parse::<f64>().expect("delta medians are numeric");
        }
    }

    #[test]
    fn rerunning_a_stable_plan_overwrites_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(dir.path());
        let mut plan = small_plan(dir.path());
        plan.strategies = vec![Strategy::BottomUp];
        plan.seeds = vec![4];
        let first_dirs = run_experiments(&plan).unwrap();
        let run_dir = first_dirs[0].clone();
        let snapshot: Vec<(String, Vec<u8>)> = [
            "run_log.csv",
            "summary.csv",
            "final_model.txt",
            "table_dump.txt",
        ]
        .iter()
        .map(|name| (name.to_string(), fs::read(run_dir.join(name)).unwrap()))
        .collect();
        run_experiments(&plan).unwrap();
        for (name, bytes) in snapshot {
            assert_eq!(
                fs::read(run_dir.join(&name)).unwrap(),
                bytes,
                "{name} must be rewritten byte for byte"
            );
        }
    }

    #[test]
    fn aggregate_reports_runs_without_a_baseline_and_skips_them() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(dir.path());
        let mut plan = small_plan(dir.path());
        plan.strategies = vec![Strategy::None, Strategy::BottomUp];
        let run_dirs = run_experiments(&plan).unwrap();
        assert_eq!(run_dirs.len(), 4);
        fs::remove_dir_all(plan.out_dir.join("toy_none_seed1")).unwrap();

        let report = aggregate(&plan.out_dir).unwrap();
        assert_eq!(report.n_runs, 3);
        assert_eq!(report.unmatched.len(), 1);
        assert!(report.unmatched[0].contains("seed=1"));
        assert!(report.unmatched[0].contains("bottom_up"));
        let change = fs::read_to_string(&report.relative_change_path).unwrap();
        assert_eq!(change.lines().count(), 2, "only the paired run remains");
    }

    #[test]
    fn aggregate_refuses_an_empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        match aggregate(dir.path()) {
            Err(HarnessError::NothingToAggregate(_)) => {}
            other => panic!("expected NothingToAggregate, got {other:?}"),
        }
    }

    #[test]
    fn wall_timing_produces_parseable_cells() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(dir.path());
        let mut plan = small_plan(dir.path());
        plan.strategies = vec![Strategy::None];
        plan.seeds = vec![0];
        plan.timing = TimingMode::Wall;
        let run_dirs = run_experiments(&plan).unwrap();
        let log = fs::read_to_string(run_dirs[0].join("run_log.csv")).unwrap();
        let mut last = -1.0;
        for line in log.lines().skip(1) {
            let elapsed: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!(elapsed >= last, "cumulative time never decreases");
            last = elapsed;
        }
    }

    #[test]
    fn malformed_summaries_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let run_dir = dir.path().join("x_none_seed0");
        fs::create_dir_all(&run_dir).unwrap();
        fs::write(run_dir.join("summary.csv"), "wrong,header\n1,2\n").unwrap();
        match aggregate(dir.path()) {
            Err(HarnessError::BadSummary { .. }) => {}
            other => panic!("expected BadSummary, got {other:?}"),
        }
    }
}
