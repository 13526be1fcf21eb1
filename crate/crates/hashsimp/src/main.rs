//! Command-line front end: `run` executes a strategy × seed grid of
//! experiments, `aggregate` pairs finished runs against the
//! no-simplification baseline. Usage problems exit with code 2, dataset
//! and run failures with code 1.

use clap::{Args, Parser, Subcommand, ValueEnum};
use hashsimp::gp::{GpConfig, Strategy};
use hashsimp::harness::{self, ExperimentPlan, TimingMode};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hashsimp",
    version,
    about = "Symbolic regression with hash-based inexact simplification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the engine for every (strategy, seed) pair and write one
    /// artifact directory per run.
    Run(Box<RunArgs>),
    /// Pair finished runs with the `none` baseline and write
    /// relative-change and per-strategy median CSVs.
    Aggregate(AggregateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// CSV dataset with a header row.
    #[arg(long)]
    dataset: PathBuf,
    /// Target column name (default: the last column).
    #[arg(long)]
    target: Option<String>,
    /// One strategy: none, bottom_up, or top_down.
    #[arg(long, conflicts_with = "strategies")]
    strategy: Option<String>,
    /// Comma-separated strategies (default: none,bottom_up,top_down).
    #[arg(long)]
    strategies: Option<String>,
    /// One seed, or an inclusive range a..b.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<String>,
    /// Inclusive seed range a..b, or one seed (default: 0).
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, default_value_t = 80)]
    pop_size: usize,
    #[arg(long, default_value_t = 200)]
    generations: usize,
    #[arg(long, default_value_t = 7)]
    max_depth: usize,
    #[arg(long, default_value_t = 128)]
    max_size: usize,
    /// Bucket-distance tolerance for accepting a substitution.
    #[arg(long, default_value_t = 1e-2)]
    tolerance: f64,
    /// Hash key width in bits.
    #[arg(long, default_value_t = 256)]
    hash_bits: usize,
    /// Double the key width when terminals collide at start-up.
    #[arg(long)]
    adaptive_hash: bool,
    /// Widest argument list for the variadic sum and product.
    #[arg(long, default_value_t = 4)]
    max_variadic_arity: usize,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Show only this many leading key bits in table dumps
    /// (default: full keys).
    #[arg(long)]
    truncate_hash: Option<usize>,
    /// `stable` writes 0.000 in all timing columns so artifacts are
    /// byte-identical across repetitions; `wall` records real seconds.
    #[arg(long, value_enum, default_value_t = TimingArg::Stable)]
    log_timing: TimingArg,
}

#[derive(Args)]
struct AggregateArgs {
    /// Directory holding the finished run directories.
    #[arg(default_value = "runs")]
    results_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TimingArg {
    Stable,
    Wall,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run(*args),
        Command::Aggregate(args) => aggregate(args),
    }
}

fn usage_error(message: &str) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(2)
}

fn run(args: RunArgs) -> ExitCode {
    let strategies = match args.strategy.as_deref().or(args.strategies.as_deref()) {
        None => Strategy::ALL.to_vec(),
        Some(spec) => match harness::parse_strategy_list(spec) {
            Ok(strategies) => strategies,
            Err(message) => return usage_error(&message),
        },
    };
    let seeds = match args.seed.as_deref().or(args.seeds.as_deref()) {
        None => vec![0],
        Some(spec) => match harness::parse_seed_spec(spec) {
            Ok(seeds) => seeds,
            Err(message) => return usage_error(&message),
        },
    };
    let base_config = GpConfig {
        pop_size: args.pop_size,
        generations: args.generations,
        max_depth: args.max_depth,
        max_size: args.max_size,
        tolerance: args.tolerance,
        hash_bits: args.hash_bits,
        adaptive_hash_sizing: args.adaptive_hash,
        max_variadic_arity: args.max_variadic_arity,
        ..GpConfig::default()
    };
    if let Err(error) = base_config.validate() {
        return usage_error(&error.to_string());
    }
    let plan = ExperimentPlan {
        dataset_path: args.dataset,
        target: args.target,
        strategies,
        seeds,
        base_config,
        out_dir: args.out_dir,
        truncate_hash: args.truncate_hash,
        timing: match args.log_timing {
            TimingArg::Stable => TimingMode::Stable,
            TimingArg::Wall => TimingMode::Wall,
        },
    };
    match harness::run_experiments(&plan) {
        Ok(run_dirs) => {
            println!(
                "completed {} runs under {}",
                run_dirs.len(),
                plan.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::FAILURE
        }
    }
}

fn aggregate(args: AggregateArgs) -> ExitCode {
    match harness::aggregate(&args.results_dir) {
        Ok(report) => {
            for line in &report.unmatched {
                eprintln!("unmatched: {line}");
            }
            println!(
                "aggregated {} runs into {} and {}",
                report.n_runs,
                report.relative_change_path.display(),
                report.aggregate_summary_path.display()
            );
            ExitCode::SUCCESS
        }
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::FAILURE
        }
    }
}
