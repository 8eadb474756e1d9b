//! Pilot calibration and per-trial estimation shared by all experiments.
//!
//! Any source of coupled (high, low) vectors can be plugged in through
//! [`CoupledSampler`]. For one budget, [`calibrate`] turns a pilot ensemble
//! into control-variate gains and the MRMF covariance operator. After that,
//! [`TrialData::draw`] and [`estimate`] produce one estimate per estimator
//! from a single set of draws.

use std::time::Instant;

use mfcov::estimators::{
    emf, euclidean_moments, lemf, mrmf_solve, precondition, precondition_with, scm, EstimateReport, Gain, MrmfProblem,
    Preconditioner, ProblemTemplate,
};
use mfcov::models::{BudgetAllocation, GaussianCoupledModel, TwoClassMixture};
use mfcov::rng::{Purpose, SeedTree, StreamRng};
use mfcov::stats::{estimate_covariance_operator, pilot_means, PilotEnsemble};
use mfcov::tangent::{regularized_inverse, DEFAULT_INVERSE_SHIFT};
use mfcov::{Error, FidelityStructure, Result, SpdMatrix, SymMatrix, TangentOperator};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{EstimatorKind, Whitening};

/// Source of statistically coupled high/low-fidelity vectors.
pub trait CoupledSampler: Sync {
    fn dim(&self) -> usize;
    fn draw_pair(&self, rng: &mut StreamRng) -> (DVector<f64>, DVector<f64>);
    fn draw_low(&self, rng: &mut StreamRng) -> DVector<f64> {
        self.draw_pair(rng).1
    }
    fn draw_high(&self, rng: &mut StreamRng) -> DVector<f64> {
        self.draw_pair(rng).0
    }
}

impl CoupledSampler for GaussianCoupledModel {
    fn dim(&self) -> usize {
        GaussianCoupledModel::dim(self)
    }
    fn draw_pair(&self, rng: &mut StreamRng) -> (DVector<f64>, DVector<f64>) {
        GaussianCoupledModel::draw_pair(self, rng)
    }
    fn draw_low(&self, rng: &mut StreamRng) -> DVector<f64> {
        GaussianCoupledModel::draw_low(self, rng)
    }
    fn draw_high(&self, rng: &mut StreamRng) -> DVector<f64> {
        GaussianCoupledModel::draw_high(self, rng)
    }
}

/// One class of a two-class mixture.
pub struct ClassSampler<'a> {
    pub mixture: &'a TwoClassMixture,
    pub class: usize,
}

impl CoupledSampler for ClassSampler<'_> {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }
    fn draw_pair(&self, rng: &mut StreamRng) -> (DVector<f64>, DVector<f64>) {
        let draw = self.mixture.sample_class(self.class, rng);
        (draw.y, draw.y_lo)
    }
}

fn vector_mean(xs: &[DVector<f64>], d: usize) -> DVector<f64> {
    xs.iter().fold(DVector::zeros(d), |a, x| a + x) / xs.len().max(1) as f64
}

/// Sample covariances and sample means of one multifidelity draw.
#[derive(Clone, Debug)]
pub struct CoupledSummary {
    pub s_hi: SymMatrix,
    pub s_lo1: SymMatrix,
    /// Pooled over the coupled and the extra low-fidelity samples.
    pub s_lo_bar: SymMatrix,
    pub mean_hi: DVector<f64>,
    pub mean_lo1: DVector<f64>,
    pub mean_lo_bar: DVector<f64>,
}

impl CoupledSummary {
    pub fn draw(sampler: &dyn CoupledSampler, alloc: &BudgetAllocation, rng: &mut StreamRng) -> Result<Self> {
        let d = sampler.dim();
        let (hi, lo1): (Vec<_>, Vec<_>) = (0..alloc.m1).map(|_| sampler.draw_pair(rng)).unzip();
        let lo2: Vec<_> = (0..alloc.m2).map(|_| sampler.draw_low(rng)).collect();
        let pooled: Vec<_> = lo1.iter().chain(&lo2).cloned().collect();
        Ok(CoupledSummary {
            s_hi: scm(&hi)?.matrix().clone(),
            s_lo1: scm(&lo1)?.matrix().clone(),
            s_lo_bar: scm(&pooled)?.matrix().clone(),
            mean_hi: vector_mean(&hi, d),
            mean_lo1: vector_mean(&lo1, d),
            mean_lo_bar: vector_mean(&pooled, d),
        })
    }

    fn spd(&self) -> Result<[SpdMatrix; 3]> {
        Ok([self.s_hi.to_spd()?, self.s_lo1.to_spd()?, self.s_lo_bar.to_spd()?])
    }
}

/// Inputs of the MRMF estimator derived from the pilot.
#[derive(Clone, Debug)]
pub struct MrmfCalibration {
    /// Per-fidelity Fréchet means of the pilot covariances.
    pub means: Vec<SpdMatrix>,
    pub gamma: TangentOperator,
    pub gamma_inv: TangentOperator,
}

/// Everything learned from the pilot ensemble at one budget. A component is
/// `Err` with a reason when the pilot cannot support it (for example when the
/// coupled sample covariances are singular).
#[derive(Clone, Debug)]
pub struct Calibration {
    pub alloc: BudgetAllocation,
    pub emf_gain: std::result::Result<f64, String>,
    pub lemf_gain: std::result::Result<f64, String>,
    /// Per-coordinate gains of the control-variate mean.
    pub mean_gain: DVector<f64>,
    pub mrmf: std::result::Result<MrmfCalibration, String>,
}

fn scalar(g: Result<Gain>) -> std::result::Result<f64, String> {
    match g {
        Ok(Gain::Scalar(a)) => Ok(a),
        Ok(Gain::Operator(_)) => Err("expected a scalar gain".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// Draw `count` pilot realizations from `stream(Pilot, block, p)` and fit
/// gains and the tangent covariance operator.
pub fn calibrate(
    sampler: &dyn CoupledSampler,
    alloc: &BudgetAllocation,
    count: usize,
    tree: &SeedTree,
    block: u64,
) -> Result<Calibration> {
    let pilots: Vec<CoupledSummary> = (0..count as u64)
        .into_par_iter()
        .map(|p| CoupledSummary::draw(sampler, alloc, &mut tree.stream(Purpose::Pilot, block, p)))
        .collect::<Result<_>>()?;
    let d = sampler.dim();

    // Gains for `x_hi + α(x̄_lo − x_lo1)`: α = Cov(x_hi, x_lo1 − x̄_lo) / Var(x_lo1 − x̄_lo).
    let hi: Vec<SymMatrix> = pilots.iter().map(|p| p.s_hi.clone()).collect();
    let dev: Vec<SymMatrix> = pilots.iter().map(|p| p.s_lo1.sub(&p.s_lo_bar)).collect();
    let emf_gain = scalar(euclidean_moments(&hi, &dev).and_then(|m| m.scalar_gain()));

    let spd: std::result::Result<Vec<[SpdMatrix; 3]>, String> =
        pilots.iter().map(|p| p.spd()).collect::<Result<_>>().map_err(|e| format!("pilot covariance: {e}"));
    let lemf_gain = spd.as_ref().map_err(Clone::clone).and_then(|s| {
        let hi: Vec<SymMatrix> = s.iter().map(|[h, _, _]| h.log()).collect();
        let dev: Vec<SymMatrix> = s.iter().map(|[_, l, b]| l.log().sub(&b.log())).collect();
        scalar(euclidean_moments(&hi, &dev).and_then(|m| m.scalar_gain()))
    });

    let mut mean_gain = DVector::zeros(d);
    for j in 0..d {
        let x: Vec<f64> = pilots.iter().map(|p| p.mean_hi[j]).collect();
        let y: Vec<f64> = pilots.iter().map(|p| p.mean_lo1[j] - p.mean_lo_bar[j]).collect();
        let (mx, my) = (crate::report::mean(&x), crate::report::mean(&y));
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let var: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        mean_gain[j] = if var > 0.0 { cov / var } else { 0.0 };
    }

    let mrmf = spd.and_then(|s| {
        let draws = s.into_iter().map(|[h, l, _]| vec![h, l]).collect();
        let fit = || -> Result<MrmfCalibration> {
            let ensemble = PilotEnsemble::new(FidelityStructure::coupled_pair(), draws)?;
            let means = pilot_means(&ensemble)?;
            let gamma = estimate_covariance_operator(&ensemble, &means)?;
            let gamma_inv = regularized_inverse(&gamma, DEFAULT_INVERSE_SHIFT)?;
            Ok(MrmfCalibration { means, gamma, gamma_inv })
        };
        fit().map_err(|e| e.to_string())
    });

    Ok(Calibration { alloc: *alloc, emf_gain, lemf_gain, mean_gain, mrmf })
}

/// Which draws a trial needs.
#[derive(Clone, Copy, Debug)]
pub struct Needs {
    pub coupled: bool,
    pub high_only: bool,
    pub low_only: bool,
}

impl Needs {
    pub fn of(estimators: &[EstimatorKind]) -> Self {
        Needs {
            coupled: estimators
                .iter()
                .any(|e| matches!(e, EstimatorKind::Emf | EstimatorKind::Lemf | EstimatorKind::Mrmf)),
            high_only: estimators.contains(&EstimatorKind::Hf),
            low_only: estimators.contains(&EstimatorKind::Lf),
        }
    }
}

/// The samples of one trial. Each part comes from its own stream, so the
/// estimators that share a part see the same data whichever subset runs.
#[derive(Debug)]
pub struct TrialData {
    pub coupled: Option<Result<CoupledSummary>>,
    /// `⌊B/c_hi⌋` high-fidelity samples.
    pub high_only: Option<Vec<DVector<f64>>>,
    /// `⌊B/c_lo⌋` low-fidelity samples.
    pub low_only: Option<Vec<DVector<f64>>>,
}

impl TrialData {
    pub fn draw(
        sampler: &dyn CoupledSampler,
        alloc: &BudgetAllocation,
        needs: Needs,
        tree: &SeedTree,
        purpose: Purpose,
        block: u64,
        trial: u64,
    ) -> Self {
        let stream = |k: u64| tree.stream(purpose, block * 4 + k, trial);
        TrialData {
            coupled: needs.coupled.then(|| CoupledSummary::draw(sampler, alloc, &mut stream(0))),
            high_only: needs.high_only.then(|| {
                let mut rng = stream(1);
                (0..alloc.high_only_count()).map(|_| sampler.draw_high(&mut rng)).collect()
            }),
            low_only: needs.low_only.then(|| {
                let mut rng = stream(2);
                (0..alloc.low_only_count()).map(|_| sampler.draw_low(&mut rng)).collect()
            }),
        }
    }
}

/// A covariance (and mean) estimate.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub covariance: SymMatrix,
    /// `Some` when the estimate is positive definite.
    pub spd: Option<SpdMatrix>,
    pub min_eig: f64,
    pub mean: DVector<f64>,
    /// MRMF only.
    pub mahalanobis: Option<f64>,
    pub converged: bool,
    pub wall_ms: f64,
}

impl Estimate {
    fn from_sym(covariance: SymMatrix, mean: DVector<f64>) -> Self {
        let min_eig = covariance.min_eigenvalue();
        let spd = if min_eig > 0.0 { covariance.to_spd().ok() } else { None };
        Estimate { covariance, spd, min_eig, mean, mahalanobis: None, converged: true, wall_ms: 0.0 }
    }

    fn from_spd(spd: SpdMatrix, mean: DVector<f64>) -> Self {
        let min_eig = spd.min_eigenvalue();
        Estimate {
            covariance: spd.to_sym(),
            spd: Some(spd),
            min_eig,
            mean,
            mahalanobis: None,
            converged: true,
            wall_ms: 0.0,
        }
    }
}

fn unavailable(what: &str, why: &str) -> Error {
    Error::Invalid(format!("{what} unavailable: {why}"))
}

/// Build the fixed-low-fidelity MRMF problem for one coupled draw: `Σ_lo`
/// is pinned to the pooled low-fidelity covariance and `Σ_hi` is penalized
/// with weight `lambda`.
pub fn mrmf_problem(cal: &MrmfCalibration, data: &CoupledSummary, lambda: f64) -> Result<MrmfProblem> {
    let [s_hi, s_lo1, s_bar] = data.spd()?;
    MrmfProblem::new(FidelityStructure::coupled_pair(), vec![s_hi, s_lo1], cal.gamma_inv.clone())?
        .with_fixed(1, s_bar)?
        .with_lambda(0, lambda)
}

/// Change of variables selected by `whitening`.
pub fn whiten(
    problem: &MrmfProblem,
    whitening: Whitening,
    cal: &MrmfCalibration,
) -> Result<(MrmfProblem, Preconditioner)> {
    match whitening {
        Whitening::None => precondition_with(problem, &vec![SpdMatrix::identity(problem.dim()); problem.data().len()]),
        Whitening::Data => precondition(problem),
        Whitening::Reference => {
            let s = problem.structure();
            let ys: Vec<SpdMatrix> = s
                .slot_fidelity()
                .iter()
                .map(|&f| match problem.fixed().get(&f) {
                    Some(pinned) => pinned.sqrt(),
                    None => cal.means[f].sqrt(),
                })
                .collect();
            precondition_with(problem, &ys)
        }
    }
}

fn solve_in(problem: &MrmfProblem, whitening: Whitening, cal: &MrmfCalibration) -> Result<EstimateReport> {
    if whitening == Whitening::None {
        return mrmf_solve(problem);
    }
    let (p, pre) = whiten(problem, whitening, cal)?;
    pre.restore(mrmf_solve(&p)?)
}

/// Solve in the coordinates chosen by `whitening`. If descent stops short of
/// a stationary point (typically pressed against the fold guard), retry in
/// the other coordinate systems; the minimizer is the same in all of them but
/// the descent path is not. Returns the first converged solve, else the one
/// with the lowest objective.
pub fn solve(problem: &MrmfProblem, whitening: Whitening, cal: &MrmfCalibration) -> Result<EstimateReport> {
    let order = match whitening {
        Whitening::Reference => [Whitening::Reference, Whitening::Data, Whitening::None],
        Whitening::Data => [Whitening::Data, Whitening::Reference, Whitening::None],
        Whitening::None => [Whitening::None, Whitening::Reference, Whitening::Data],
    };
    let mut best: Option<EstimateReport> = None;
    let mut first_error = None;
    for w in order {
        match solve_in(problem, w, cal) {
            Ok(r) if r.converged => return Ok(r),
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.objective_value < b.objective_value) {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_error.expect("no solve succeeded and none failed"))
}

fn cv_mean(data: &CoupledSummary, gain: &DVector<f64>) -> DVector<f64> {
    &data.mean_hi + gain.component_mul(&(&data.mean_lo_bar - &data.mean_lo1))
}

/// Options of the estimation phase.
#[derive(Clone, Copy, Debug, Default)]
pub struct EstimateOptions {
    /// MRMF weight on the high-fidelity penalty.
    pub lambda: Option<f64>,
    pub whitening: Whitening,
    pub timed: bool,
}

/// Estimate with `kind` from `data`.
pub fn estimate(kind: EstimatorKind, data: &TrialData, cal: &Calibration, opts: EstimateOptions) -> Result<Estimate> {
    let start = Instant::now();
    let coupled = || -> Result<&CoupledSummary> {
        match &data.coupled {
            Some(Ok(c)) => Ok(c),
            Some(Err(e)) => Err(Error::Invalid(format!("coupled draw failed: {e}"))),
            None => Err(Error::Invalid("trial has no coupled draw".into())),
        }
    };
    let mut est = match kind {
        EstimatorKind::Hf | EstimatorKind::Lf => {
            let samples = if kind == EstimatorKind::Hf { &data.high_only } else { &data.low_only };
            let samples =
                samples.as_ref().ok_or_else(|| Error::Invalid(format!("trial has no {} draw", kind.name())))?;
            let s = scm(samples)?;
            Estimate::from_sym(s.matrix().clone(), vector_mean(samples, s.matrix().dim()))
        }
        EstimatorKind::Emf => {
            let c = coupled()?;
            let a = cal.emf_gain.as_ref().map_err(|e| unavailable("EMF gain", e))?;
            let e = emf(&c.s_hi, &c.s_lo1, &c.s_lo_bar, &Gain::Scalar(*a))?;
            Estimate::from_sym(e.matrix, cv_mean(c, &cal.mean_gain))
        }
        EstimatorKind::Lemf => {
            let c = coupled()?;
            let a = cal.lemf_gain.as_ref().map_err(|e| unavailable("LEMF gain", e))?;
            let [h, l, b] = c.spd()?;
            Estimate::from_spd(lemf(&h, &l, &b, &Gain::Scalar(*a))?, cv_mean(c, &cal.mean_gain))
        }
        EstimatorKind::Mrmf => {
            let c = coupled()?;
            let m = cal.mrmf.as_ref().map_err(|e| unavailable("MRMF calibration", e))?;
            let lambda = opts.lambda.ok_or_else(|| unavailable("MRMF", "no regularization weight"))?;
            let report = solve(&mrmf_problem(m, c, lambda)?, opts.whitening, m)?;
            let mut e = Estimate::from_spd(report.high().clone(), cv_mean(c, &cal.mean_gain));
            e.mahalanobis = Some(report.mahalanobis_value);
            e.converged = report.converged;
            e
        }
    };
    if opts.timed {
        est.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    Ok(est)
}

/// Tuning problems drawn from the sampler itself.
pub struct TuningTemplate<'a> {
    pub sampler: &'a dyn CoupledSampler,
    pub calibration: &'a MrmfCalibration,
    pub alloc: BudgetAllocation,
    pub whitening: Whitening,
}

impl ProblemTemplate for TuningTemplate<'_> {
    fn dim(&self) -> usize {
        self.sampler.dim()
    }

    fn instance(&self, lambda: f64, rng: &mut StreamRng) -> Result<MrmfProblem> {
        let data = CoupledSummary::draw(self.sampler, &self.alloc, rng)?;
        let problem = mrmf_problem(self.calibration, &data, lambda)?;
        match self.whitening {
            Whitening::None => Ok(problem),
            // Only the Mahalanobis value is read, and it does not depend on
            // the coordinates.
            w => Ok(whiten(&problem, w, self.calibration)?.0),
        }
    }
}
