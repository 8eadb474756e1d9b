//! Metric learning on a synthetic two-class mixture.
//!
//! Each class is a coupled sampler: the high-fidelity observable is the class
//! draw `y` and the low-fidelity one is `y + η` with isotropic `η`. Every
//! estimator estimates both class covariances and means, from which a GMML
//! metric is formed and compared to a reference metric computed from a large
//! high-fidelity sample.

use mfcov::metric::{frobenius_sq, mean_relative_error, metric_from_estimates, MetricMatrix};
use mfcov::models::{make_two_class_mixture, wishart, LowFidelityNoise, TwoClassMixture};
use mfcov::rng::{Purpose, SeedTree};
use mfcov::spd::intrinsic_distance;
use mfcov::SymMatrix;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{EstimatorKind, ExperimentConfig, LambdaSearch};
use crate::error::BenchError;
use crate::pipeline::{estimate, Calibration, ClassSampler, Estimate, EstimateOptions, Needs, TrialData};
use crate::report::{median, MreRecord, Num, TrialRecord};
use crate::simple::{calibrate_budget, BudgetTuning, SearchRow};

pub struct MetricExperiment {
    pub config: ExperimentConfig,
    pub mixture: TwoClassMixture,
    pub reference: MetricMatrix,
    pub test_points: Vec<DVector<f64>>,
    tree: SeedTree,
}

pub struct MetricOutcome {
    pub records: Vec<TrialRecord>,
    pub mre: Vec<MreRecord>,
    pub tuning: Vec<BudgetTuning>,
}

/// Calibration of both classes at one budget.
pub struct BudgetCalibration {
    pub classes: [Calibration; 2],
    pub lambdas: [Option<f64>; 2],
}

fn class_moments(ys: &[DVector<f64>]) -> Result<(SymMatrix, DVector<f64>), BenchError> {
    let s = mfcov::estimators::scm(ys)?;
    let d = s.matrix().dim();
    let mean = ys.iter().fold(DVector::zeros(d), |a, y| a + y) / ys.len() as f64;
    Ok((s.matrix().clone(), mean))
}

impl MetricExperiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, BenchError> {
        config.validate()?;
        let tree = SeedTree::new(config.seed);
        let m = &config.metric;
        let d = config.dim;
        let mut rng = tree.stream(Purpose::Truth, 0, 0);
        let covariances = [wishart(d, &mut rng), wishart(d, &mut rng)];
        let noise = LowFidelityNoise::isotropic(d, m.low_noise_var);
        let mixture = make_two_class_mixture(d, m.separation, covariances, noise, &mut rng)?;

        let mut rng = tree.stream(Purpose::Reference, 0, 0);
        let mut by_class: [Vec<DVector<f64>>; 2] = [Vec::new(), Vec::new()];
        for _ in 0..m.reference_samples {
            let draw = mixture.sample(&mut rng);
            by_class[draw.class].push(draw.y);
        }
        let (g0, m0) = class_moments(&by_class[0])?;
        let (g1, m1) = class_moments(&by_class[1])?;
        let reference = metric_from_estimates(&g0, &g1, &m0, &m1, m.t, "reference")?;

        let mut rng = tree.stream(Purpose::TestPoints, 0, 0);
        let test_points = (0..m.test_points).map(|_| mixture.sample(&mut rng).y).collect();
        Ok(MetricExperiment { config, mixture, reference, test_points, tree })
    }

    fn sampler(&self, class: usize) -> ClassSampler<'_> {
        ClassSampler { mixture: &self.mixture, class }
    }

    /// Each class receives the full allocation of budget `i`. Class `c` uses
    /// stream block `2i + c`.
    pub fn calibrate(&self, i: usize) -> Result<(BudgetCalibration, [BudgetTuning; 2]), BenchError> {
        let direct = self.config.metric.lambda_search == LambdaSearch::Direct;
        let calibrate_class = |c: usize| -> Result<(Calibration, BudgetTuning), BenchError> {
            let block = (2 * i + c) as u64;
            let (cal, mut t) = calibrate_budget(&self.sampler(c), &self.config, &self.tree, i, block, !direct)?;
            t.class = Some(c);
            Ok((cal, t))
        };
        let (c0, mut t0) = calibrate_class(0)?;
        let (c1, mut t1) = calibrate_class(1)?;
        let classes = [c0, c1];
        if direct && self.config.estimators.contains(&EstimatorKind::Mrmf) {
            let (lambda, rows) = self.direct_search(i, &classes);
            for t in [&mut t0, &mut t1] {
                t.lambda = lambda;
                t.search = rows.clone();
            }
        }
        let lambdas = [t0.lambda, t1.lambda];
        Ok((BudgetCalibration { classes, lambdas }, [t0, t1]))
    }

    fn draw(&self, i: usize, classes: &[Calibration; 2], needs: Needs, purpose: Purpose, t: u64) -> [TrialData; 2] {
        [0, 1].map(|c| {
            let block = (2 * i + c) as u64;
            TrialData::draw(&self.sampler(c), &classes[c].alloc, needs, &self.tree, purpose, block, t)
        })
    }

    fn estimate_pair(
        &self,
        kind: EstimatorKind,
        data: &[TrialData; 2],
        classes: &[Calibration; 2],
        lambdas: [Option<f64>; 2],
    ) -> mfcov::Result<[Estimate; 2]> {
        let cfg = &self.config;
        let one = |c: usize| {
            let opts = EstimateOptions { lambda: lambdas[c], whitening: cfg.whitening, timed: cfg.record_wall_time };
            estimate(kind, &data[c], &classes[c], opts)
        };
        Ok([one(0)?, one(1)?])
    }

    /// Grid search over `lambda_grid` on `search_trials` draws from
    /// `stream(Tuning, ·, t + 1)`.
    fn direct_search(&self, i: usize, classes: &[Calibration; 2]) -> (Option<f64>, Vec<SearchRow>) {
        let needs = Needs::of(&[EstimatorKind::Mrmf]);
        let draws: Vec<[TrialData; 2]> = (0..self.config.metric.search_trials as u64)
            .into_par_iter()
            .map(|t| self.draw(i, classes, needs, Purpose::Tuning, t + 1))
            .collect();
        let rows: Vec<SearchRow> = self
            .config
            .lambda_grid
            .iter()
            .map(|&lambda| {
                let errors: Vec<f64> = draws
                    .par_iter()
                    .map(|d| match self.estimate_pair(EstimatorKind::Mrmf, d, classes, [Some(lambda); 2]) {
                        Ok(est) => self.record(0, 0.0, EstimatorKind::Mrmf, est).0.se_frobenius,
                        Err(_) => f64::INFINITY,
                    })
                    .map(|x| if x.is_nan() { f64::INFINITY } else { x })
                    .collect();
                SearchRow { lambda, median_se_frobenius: Num(median(&errors)) }
            })
            .collect();
        let best = rows
            .iter()
            .filter(|r| r.median_se_frobenius.0.is_finite())
            .min_by(|a, b| a.median_se_frobenius.0.total_cmp(&b.median_se_frobenius.0))
            .map(|r| r.lambda);
        (best, rows)
    }

    pub fn tune(&self) -> Result<Vec<BudgetTuning>, BenchError> {
        let mut out = Vec::new();
        for i in 0..self.config.budgets.len() {
            out.extend(self.calibrate(i)?.1);
        }
        Ok(out)
    }

    fn record(&self, trial: usize, budget: f64, kind: EstimatorKind, est: [Estimate; 2]) -> (TrialRecord, MreRecord) {
        let name = kind.name();
        let min_eig = est[0].min_eig.min(est[1].min_eig);
        let mahalanobis = match (est[0].mahalanobis, est[1].mahalanobis) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        let base = TrialRecord {
            trial,
            budget,
            estimator: name.to_string(),
            se_frobenius: f64::INFINITY,
            se_intrinsic: f64::INFINITY,
            min_eig,
            mahalanobis,
            wall_ms: est[0].wall_ms + est[1].wall_ms,
        };
        let mre = |v| MreRecord { trial, budget, estimator: name.to_string(), mre: v };
        let t = self.config.metric.t;
        match metric_from_estimates(&est[0].covariance, &est[1].covariance, &est[0].mean, &est[1].mean, t, name) {
            Ok(a) => {
                let se_intrinsic = intrinsic_distance(&a.a, &self.reference.a).map_or(f64::NAN, |d| d * d);
                let value = mean_relative_error(&a, &self.reference, &self.test_points).unwrap_or(f64::NAN);
                (TrialRecord { se_frobenius: frobenius_sq(&a, &self.reference), se_intrinsic, ..base }, mre(value))
            }
            // No geodesic metric exists for an indefinite class covariance.
            Err(_) if min_eig <= 0.0 => (base, mre(f64::INFINITY)),
            Err(e) => {
                log::debug!("trial {trial} budget {budget} {name}: {e}");
                (TrialRecord::failed(trial, budget, name), mre(f64::NAN))
            }
        }
    }

    pub fn evaluate(&self, i: usize, cal: &BudgetCalibration) -> (Vec<TrialRecord>, Vec<MreRecord>) {
        let cfg = &self.config;
        let budget = cfg.budgets[i];
        let needs = Needs::of(&cfg.estimators);
        let per_trial: Vec<Vec<(TrialRecord, MreRecord)>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let data = self.draw(i, &cal.classes, needs, Purpose::Evaluation, t as u64);
                cfg.estimators
                    .iter()
                    .map(|&kind| match self.estimate_pair(kind, &data, &cal.classes, cal.lambdas) {
                        Ok(est) => self.record(t, budget, kind, est),
                        Err(e) => {
                            log::debug!("trial {t} budget {budget} {}: {e}", kind.name());
                            let mre = MreRecord { trial: t, budget, estimator: kind.name().into(), mre: f64::NAN };
                            (TrialRecord::failed(t, budget, kind.name()), mre)
                        }
                    })
                    .collect()
            })
            .collect();
        per_trial.into_iter().flatten().unzip()
    }

    pub fn run(&self) -> Result<MetricOutcome, BenchError> {
        let mut out = MetricOutcome { records: Vec::new(), mre: Vec::new(), tuning: Vec::new() };
        for i in 0..self.config.budgets.len() {
            let (cal, tuning) = self.calibrate(i)?;
            log::info!("budget {}: lambda = {:?}", self.config.budgets[i], cal.lambdas);
            let (records, mre) = self.evaluate(i, &cal);
            out.records.extend(records);
            out.mre.extend(mre);
            out.tuning.extend(tuning);
        }
        Ok(out)
    }
}
