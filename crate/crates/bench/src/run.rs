//! Running a configured experiment and writing its report files.
//!
//! Output directory layout:
//!
//! - `trials.csv`: one row per trial, budget and estimator.
//! - `summary.json`: per-budget summaries recomputable from `trials.csv`.
//! - `tuning.json`: pilot gains and the MRMF weight chosen at each budget.
//! - `mre.csv`: metric-learning runs only.
//! - `selftest.json`: property-suite runs only.
//! - `manifest.json`: seed, config hash, versions and the list of files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::BenchError;
use crate::metric::MetricExperiment;
use crate::report::{summarize, summarize_mre, write_csv, write_mre_csv, MreSummary, Summary};
use crate::selftest::{self, CheckResult};
use crate::simple::{BudgetTuning, SimpleExperiment};

pub const OUTPUT_DIR_VAR: &str = "MFCOV_OUTPUT_DIR";
pub const THREADS_VAR: &str = "MFCOV_THREADS";

#[derive(Serialize)]
struct Manifest<'a> {
    kind: ExperimentKind,
    seed: u64,
    config_sha256: String,
    mfcov_version: &'static str,
    bench_version: &'static str,
    threads: usize,
    files: Vec<&'a str>,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    #[serde(flatten)]
    summary: &'a Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    mre: Option<&'a [MreSummary]>,
}

/// What a run produced.
pub struct RunReport {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    pub summary: Option<Summary>,
    pub checks: Vec<CheckResult>,
}

impl RunReport {
    pub fn checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Hex SHA-256 of the canonical TOML form of `config`.
pub fn config_hash(config: &ExperimentConfig) -> String {
    Sha256::digest(config.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, BenchError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<(), BenchError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Run `config` and write its reports to `output_dir`.
pub fn run_experiment(config: &ExperimentConfig, output_dir: &Path) -> Result<RunReport, BenchError> {
    config.validate()?;
    fs::create_dir_all(output_dir)?;
    let mut files: Vec<&str> = Vec::new();
    let mut summary = None;
    let mut checks = Vec::new();
    match config.kind {
        ExperimentKind::SimpleGaussian | ExperimentKind::MetricLearning => {
            let (records, tuning, mre): (_, Vec<BudgetTuning>, _) = if config.kind == ExperimentKind::SimpleGaussian {
                let out = SimpleExperiment::new(config.clone())?.run()?;
                (out.records, out.tuning, None)
            } else {
                let out = MetricExperiment::new(config.clone())?.run()?;
                (out.records, out.tuning, Some(out.mre))
            };
            let mut w = create(output_dir, "trials.csv")?;
            write_csv(&records, &mut w)?;
            w.flush()?;
            files.push("trials.csv");
            if let Some(mre) = &mre {
                write_mre_csv(mre, create(output_dir, "mre.csv")?)?;
                files.push("mre.csv");
            }
            let s = summarize(&records)?;
            let mre_summary = mre.as_deref().map(summarize_mre);
            write_json(output_dir, "summary.json", &SummaryFile { summary: &s, mre: mre_summary.as_deref() })?;
            write_json(output_dir, "tuning.json", &tuning)?;
            files.extend(["summary.json", "tuning.json"]);
            summary = Some(s);
        }
        ExperimentKind::PropertySuite => {
            checks = selftest::run_all(config.seed);
            write_json(output_dir, "selftest.json", &checks)?;
            files.push("selftest.json");
        }
    }
    files.push("manifest.json");
    let manifest = Manifest {
        kind: config.kind,
        seed: config.seed,
        config_sha256: config_hash(config),
        mfcov_version: mfcov::VERSION,
        bench_version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        files: files.clone(),
        config,
    };
    write_json(output_dir, "manifest.json", &manifest)?;
    Ok(RunReport {
        output_dir: output_dir.to_path_buf(),
        files: files.into_iter().map(String::from).collect(),
        summary,
        checks,
    })
}

/// Output directory: the explicit override, else `MFCOV_OUTPUT_DIR`, else the
/// config's own.
pub fn resolve_output_dir(config: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_VAR).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| config.output_dir.clone())
}

/// Tuning phase only.
pub fn tune_experiment(config: &ExperimentConfig) -> Result<Vec<BudgetTuning>, BenchError> {
    match config.kind {
        ExperimentKind::SimpleGaussian => SimpleExperiment::new(config.clone())?.tune(),
        ExperimentKind::MetricLearning => MetricExperiment::new(config.clone())?.tune(),
        ExperimentKind::PropertySuite => Err(BenchError::Config("property-suite has no tuning phase".into())),
    }
}
