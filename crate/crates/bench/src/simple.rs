//! Coupled Gaussian experiment: `X_lo = X_hi + ε`, `ε ~ N(0, σ²I)`, with a
//! Wishart-distributed `Σ_hi`.

use mfcov::estimators::{tune_lambda, LambdaScore};
use mfcov::models::{wishart, GaussianCoupledModel};
use mfcov::rng::{Purpose, SeedTree};
use mfcov::spd::intrinsic_distance;
use mfcov::SpdMatrix;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EstimatorKind, ExperimentConfig};
use crate::error::BenchError;
use crate::pipeline::{
    calibrate, estimate, Calibration, CoupledSampler, Estimate, EstimateOptions, Needs, TrialData, TuningTemplate,
};
use crate::report::{Num, TrialRecord};

/// Calibration and tuning outcome at one budget.
#[derive(Clone, Debug, Serialize)]
pub struct BudgetTuning {
    pub budget: f64,
    /// Class index in the metric-learning experiment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    pub m1: usize,
    pub m2: usize,
    pub cost: f64,
    pub emf_gain: Option<f64>,
    pub lemf_gain: Option<f64>,
    pub lambda: Option<f64>,
    pub scores: Vec<ScoreRow>,
    /// Direct-search results of the metric-learning experiment.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub search: Vec<SearchRow>,
    /// Why a component is missing, if one is.
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScoreRow {
    pub lambda: f64,
    pub mean_mahalanobis: Option<Num>,
    pub converged: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchRow {
    pub lambda: f64,
    pub median_se_frobenius: Num,
}

impl From<&LambdaScore> for ScoreRow {
    fn from(s: &LambdaScore) -> Self {
        ScoreRow { lambda: s.lambda, mean_mahalanobis: s.mean_mahalanobis.map(Num), converged: s.converged }
    }
}

impl BudgetTuning {
    pub(crate) fn new(cal: &Calibration) -> Self {
        let mut notes = Vec::new();
        let mut keep = |name: &str, r: &Result<f64, String>| match r {
            Ok(v) => Some(*v),
            Err(e) => {
                notes.push(format!("{name}: {e}"));
                None
            }
        };
        let emf_gain = keep("emf", &cal.emf_gain);
        let lemf_gain = keep("lemf", &cal.lemf_gain);
        if let Err(e) = &cal.mrmf {
            notes.push(format!("mrmf: {e}"));
        }
        BudgetTuning {
            budget: cal.alloc.budget,
            class: None,
            m1: cal.alloc.m1,
            m2: cal.alloc.m2,
            cost: cal.alloc.cost(),
            emf_gain,
            lemf_gain,
            lambda: None,
            scores: vec![],
            search: vec![],
            notes,
        }
    }
}

pub struct SimpleExperiment {
    pub config: ExperimentConfig,
    pub model: GaussianCoupledModel,
    tree: SeedTree,
}

pub struct Outcome {
    pub records: Vec<TrialRecord>,
    pub tuning: Vec<BudgetTuning>,
}

/// Squared errors of an estimate against the truth.
pub fn record_for(trial: usize, budget: f64, kind: EstimatorKind, est: &Estimate, truth: &SpdMatrix) -> TrialRecord {
    let se_frobenius = (est.covariance.matrix() - truth.matrix()).norm_squared();
    let se_intrinsic = match &est.spd {
        Some(s) => intrinsic_distance(s, truth).map_or(f64::NAN, |d| d * d),
        None => f64::INFINITY,
    };
    TrialRecord {
        trial,
        budget,
        estimator: kind.name().to_string(),
        se_frobenius,
        se_intrinsic,
        min_eig: est.min_eig,
        mahalanobis: est.mahalanobis,
        wall_ms: est.wall_ms,
    }
}

/// Pilot phase from `stream(Pilot, block, ·)`, then, if `tune` is set and
/// MRMF is requested, `tune_lambda` seeded from `stream(Tuning, block, 0)`.
pub fn calibrate_budget(
    sampler: &dyn CoupledSampler,
    config: &ExperimentConfig,
    tree: &SeedTree,
    i: usize,
    block: u64,
    tune: bool,
) -> Result<(Calibration, BudgetTuning), BenchError> {
    let alloc = config.allocation(i)?;
    let cal = calibrate(sampler, &alloc, config.pilot, tree, block)?;
    let mut tuning = BudgetTuning::new(&cal);
    if !tune || !config.estimators.contains(&EstimatorKind::Mrmf) {
        return Ok((cal, tuning));
    }
    if let Ok(m) = &cal.mrmf {
        let template = TuningTemplate { sampler, calibration: m, alloc, whitening: config.whitening };
        let seed = tree.stream(Purpose::Tuning, block, 0).next_u64();
        match tune_lambda(&template, &config.lambda_grid, config.tuning_trials, seed) {
            Ok(sel) => {
                tuning.lambda = Some(sel.lambda);
                tuning.scores = sel.scores.iter().map(ScoreRow::from).collect();
            }
            Err(e) => tuning.notes.push(format!("tuning: {e}")),
        }
    }
    Ok((cal, tuning))
}

impl SimpleExperiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, BenchError> {
        config.validate()?;
        let tree = SeedTree::new(config.seed);
        let sigma_hi = wishart(config.dim, &mut tree.stream(Purpose::Truth, 0, 0));
        let model = GaussianCoupledModel::new(sigma_hi, config.noise_var)?;
        Ok(SimpleExperiment { config, model, tree })
    }

    pub fn truth(&self) -> &SpdMatrix {
        self.model.sigma_hi()
    }

    /// Pilot and tuning phases at budget index `i`.
    pub fn calibrate(&self, i: usize) -> Result<(Calibration, BudgetTuning), BenchError> {
        calibrate_budget(&self.model, &self.config, &self.tree, i, i as u64, true)
    }

    pub fn tune(&self) -> Result<Vec<BudgetTuning>, BenchError> {
        (0..self.config.budgets.len()).map(|i| Ok(self.calibrate(i)?.1)).collect()
    }

    /// Evaluation phase at budget index `i`.
    pub fn evaluate(&self, i: usize, cal: &Calibration, lambda: Option<f64>) -> Vec<TrialRecord> {
        let cfg = &self.config;
        let budget = cfg.budgets[i];
        let needs = Needs::of(&cfg.estimators);
        let per_trial: Vec<Vec<TrialRecord>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let data = TrialData::draw(
                    &self.model,
                    &cal.alloc,
                    needs,
                    &self.tree,
                    Purpose::Evaluation,
                    i as u64,
                    t as u64,
                );
                let opts = EstimateOptions { lambda, whitening: cfg.whitening, timed: cfg.record_wall_time };
                cfg.estimators
                    .iter()
                    .map(|&kind| match estimate(kind, &data, cal, opts) {
                        Ok(est) => record_for(t, budget, kind, &est, self.truth()),
                        Err(e) => {
                            log::debug!("trial {t} budget {budget} {}: {e}", kind.name());
                            TrialRecord::failed(t, budget, kind.name())
                        }
                    })
                    .collect()
            })
            .collect();
        per_trial.into_iter().flatten().collect()
    }

    pub fn run(&self) -> Result<Outcome, BenchError> {
        let mut records = Vec::new();
        let mut tuning = Vec::new();
        for i in 0..self.config.budgets.len() {
            let (cal, t) = self.calibrate(i)?;
            log::info!("budget {}: M1 = {}, M2 = {}, lambda = {:?}", t.budget, t.m1, t.m2, t.lambda);
            records.extend(self.evaluate(i, &cal, t.lambda));
            tuning.push(t);
        }
        Ok(Outcome { records, tuning })
    }
}
