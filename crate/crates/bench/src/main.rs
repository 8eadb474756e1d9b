use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfcov_bench::report::{column, histogram, read_csv, summarize};
use mfcov_bench::run::{resolve_output_dir, run_experiment, tune_experiment, THREADS_VAR};
use mfcov_bench::{selftest, BenchError, ExperimentConfig};

/// Multifidelity covariance estimation benchmarks.
///
/// Exit status: 0 on success, 1 for configuration errors, 2 for runtime
/// failures, 3 when a self-test check fails. `MFCOV_OUTPUT_DIR` overrides the
/// configured output directory and `MFCOV_THREADS` the worker thread count.
#[derive(Parser)]
#[command(name = "mfcov", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pilot, tuning and evaluation phases and write report files.
    Run {
        config: PathBuf,
        /// Overrides both the config and MFCOV_OUTPUT_DIR.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Recompute summaries from a trials CSV and print them as JSON.
    Summarize {
        csv: PathBuf,
        /// Print binned counts of this column instead.
        #[arg(long)]
        histogram: Option<String>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Bin in log10.
        #[arg(long)]
        log: bool,
        /// Restrict the histogram to one estimator.
        #[arg(long)]
        estimator: Option<String>,
        /// Restrict the histogram to one budget.
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Run the pilot and tuning phases and print the chosen weights as JSON.
    Tune { config: PathBuf },
    /// Run the invariant checks of every module.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), BenchError> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn configure_threads() -> Result<(), BenchError> {
    let Some(raw) = std::env::var_os(THREADS_VAR) else { return Ok(()) };
    let raw = raw.to_string_lossy();
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| BenchError::Config(format!("{THREADS_VAR}={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| BenchError::Runtime(format!("thread pool: {e}")))
}

fn report_checks(checks: &[selftest::CheckResult]) -> bool {
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.passed)
}

fn execute(command: Command) -> Result<ExitCode, BenchError> {
    match command {
        Command::Run { config, output_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = resolve_output_dir(&cfg, output_dir.as_deref());
            let report = run_experiment(&cfg, &dir)?;
            if !report.checks.is_empty() && !report_checks(&report.checks) {
                return Ok(ExitCode::from(3));
            }
            for f in &report.files {
                println!("{}", report.output_dir.join(f).display());
            }
        }
        Command::Summarize { csv, histogram: col, bins, log, estimator, budget } => {
            let file = File::open(&csv).map_err(|e| BenchError::Runtime(format!("{}: {e}", csv.display())))?;
            let records = read_csv(BufReader::new(file))?;
            match col {
                None => print_json(&summarize(&records)?)?,
                Some(name) => {
                    let rows: Vec<_> = records
                        .into_iter()
                        .filter(|r| estimator.as_deref().is_none_or(|e| r.estimator == e))
                        .filter(|r| budget.is_none_or(|b| r.budget == b))
                        .collect();
                    print_json(&histogram(&column(&rows, &name)?, bins, log))?;
                }
            }
        }
        Command::Tune { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print_json(&tune_experiment(&cfg)?)?;
        }
        Command::Selftest { seed } => {
            if !report_checks(&selftest::run_all(seed)) {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match configure_threads().and_then(|()| execute(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
