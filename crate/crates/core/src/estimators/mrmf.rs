//! Manifold-regression multifidelity (MRMF) estimation.
//!
//! Given one realization of a stacked random SPD matrix `(S_1, …, S_N)` whose
//! slot `n` has Fréchet mean `Σ_{f(n)}`, the estimator minimizes
//!
//! ```text
//! f(Σ) = vᵀ Γ⁻¹ v + Σ_ℓ λ_ℓ ‖log Σ_ℓ‖²_F,    v = flat(log_{Σ_{f(n)}} S_n)_n
//! ```
//!
//! over `Σ_ℓ = B_ℓ²` with unconstrained symmetric `B_ℓ`. Fidelities may be
//! pinned to a known value; groups made only of pinned fidelities are
//! constant and dropped from the objective.
//!
//! Slot means may carry an extra congruence, `mean_n = C_n Σ_{f(n)} C_nᵀ`,
//! and the penalty may be taken on `R_ℓ Σ_ℓ R_ℓᵀ`. Both default to the
//! identity; [`precondition`] uses them to rewrite a problem in coordinates
//! where all data are identity matrices.
//!
//! The tangent of slot `n` is evaluated as `−S^{1/2} h(W) S^{1/2}` with
//! `W = S^{-1/2} mean_n S^{-1/2}` and `h(x) = x log x`, which equals
//! `log_{mean_n} S_n` and keeps the mean inside a single spectral function.
//! The analytic gradient back-propagates through it with Daleckii–Krein
//! divided differences.
//!
//! `x ↦ x log x` is not monotone: it folds at `x = 1/e`, so two means on
//! either side of the fold give the same tangent and the same objective. A
//! solve of an unpenalized fidelity stays on the branch of the data: a trial
//! point is rejected when a guarded slot's whitened mean `W` has an
//! eigenvalue at or below `1/e`. A positive `λ_ℓ` separates mirror points on
//! its own, so penalized fidelities are not guarded.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::FidelityStructure;
use crate::optim::{gradient_descent, DescentSettings};
use crate::spd::{check_dims, pd_threshold, symmetrize, Congruence, SpdMatrix, Spectral, SymMatrix};
use crate::tangent::{build_congruence_operator, flat_of, tri_dim, unflat, TangentOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub descent: DescentSettings,
    pub gradient: GradientMode,
    /// Central-difference step relative to `1 + ‖B_ℓ‖_F`.
    pub fd_relative_step: f64,
    /// Floor on the eigenvalues of `B²` inside the objective.
    pub eigen_floor: f64,
    /// Keep the whitened means of unpenalized fidelities above the fold of
    /// `x log x` when they start there.
    pub principal_branch: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            descent: DescentSettings::default(),
            gradient: GradientMode::Analytic,
            fd_relative_step: 1e-6,
            eigen_floor: 1e-12,
            principal_branch: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MrmfProblem {
    structure: FidelityStructure,
    data: Vec<SpdMatrix>,
    gamma_inv: TangentOperator,
    lambdas: Vec<f64>,
    fixed: BTreeMap<usize, SpdMatrix>,
    initial: BTreeMap<usize, SpdMatrix>,
    settings: SolverSettings,
    slot_maps: Vec<Option<DMatrix<f64>>>,
    penalty_maps: Vec<Option<DMatrix<f64>>>,
}

/// Objective split into its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub mahalanobis: f64,
    pub penalty: f64,
}

#[derive(Clone, Debug)]
pub struct EstimateReport {
    /// One estimate per fidelity; pinned fidelities report their pinned value.
    pub estimates: Vec<SpdMatrix>,
    pub objective_value: f64,
    pub mahalanobis_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

impl EstimateReport {
    pub fn high(&self) -> &SpdMatrix {
        &self.estimates[0]
    }
}

impl MrmfProblem {
    pub fn new(structure: FidelityStructure, data: Vec<SpdMatrix>, gamma_inv: TangentOperator) -> Result<Self> {
        check_dims(structure.slot_count(), data.len())?;
        let d = data[0].dim();
        for s in &data {
            check_dims(d, s.dim())?;
        }
        check_dims(d, gamma_inv.dim())?;
        if !gamma_inv.is_square() {
            return Err(Error::Invalid("inverse covariance operator must be square".into()));
        }
        check_dims(structure.slot_count(), gamma_inv.count())?;
        if !gamma_inv.is_symmetric(1e-10) {
            return Err(Error::Invalid("inverse covariance operator is not symmetric".into()));
        }
        let nf = structure.num_fidelities();
        let n = structure.slot_count();
        Ok(MrmfProblem {
            structure,
            data,
            gamma_inv,
            lambdas: vec![0.0; nf],
            fixed: BTreeMap::new(),
            initial: BTreeMap::new(),
            settings: SolverSettings::default(),
            slot_maps: vec![None; n],
            penalty_maps: vec![None; nf],
        })
    }

    pub fn with_lambdas(mut self, lambdas: Vec<f64>) -> Result<Self> {
        check_dims(self.structure.num_fidelities(), lambdas.len())?;
        if let Some(&l) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::OutOfRange { name: "lambda", value: l });
        }
        self.lambdas = lambdas;
        Ok(self)
    }

    pub fn with_lambda(mut self, fidelity: usize, lambda: f64) -> Result<Self> {
        let mut l = std::mem::take(&mut self.lambdas);
        if fidelity >= l.len() {
            return Err(Error::InvalidStructure(format!("no fidelity {fidelity}")));
        }
        l[fidelity] = lambda;
        self.with_lambdas(l)
    }

    /// Pin `Σ_fidelity` to `value`.
    pub fn with_fixed(mut self, fidelity: usize, value: SpdMatrix) -> Result<Self> {
        self.check_fidelity(fidelity, &value)?;
        self.fixed.insert(fidelity, value);
        Ok(self)
    }

    /// Start the optimizer for `fidelity` at `value` instead of the plug-in.
    pub fn with_initial(mut self, fidelity: usize, value: SpdMatrix) -> Result<Self> {
        self.check_fidelity(fidelity, &value)?;
        self.initial.insert(fidelity, value);
        Ok(self)
    }

    pub fn with_settings(mut self, settings: SolverSettings) -> Self {
        self.settings = settings;
        self
    }

    fn check_fidelity(&self, fidelity: usize, value: &SpdMatrix) -> Result<()> {
        if fidelity >= self.structure.num_fidelities() {
            return Err(Error::InvalidStructure(format!("no fidelity {fidelity}")));
        }
        check_dims(self.dim(), value.dim())
    }

    pub fn structure(&self) -> &FidelityStructure {
        &self.structure
    }

    pub fn data(&self) -> &[SpdMatrix] {
        &self.data
    }

    pub fn gamma_inv(&self) -> &TangentOperator {
        &self.gamma_inv
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn fixed(&self) -> &BTreeMap<usize, SpdMatrix> {
        &self.fixed
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn dim(&self) -> usize {
        self.data[0].dim()
    }

    pub fn free_fidelities(&self) -> Vec<usize> {
        (0..self.structure.num_fidelities()).filter(|f| !self.fixed.contains_key(f)).collect()
    }

    /// Slots of groups containing at least one free fidelity.
    pub fn active_slots(&self) -> Vec<usize> {
        let s = &self.structure;
        let live: Vec<bool> = s.groups().iter().map(|g| g.iter().any(|f| !self.fixed.contains_key(f))).collect();
        (0..s.slot_count()).filter(|&n| live[s.slot_group()[n]]).collect()
    }

    /// Objective at per-fidelity candidates; pinned fidelities use their
    /// pinned values regardless of the candidate.
    pub fn objective(&self, sigmas: &[SpdMatrix]) -> Result<ObjectiveValue> {
        check_dims(self.structure.num_fidelities(), sigmas.len())?;
        let ev = Evaluator::new(self)?;
        let mats: Vec<DMatrix<f64>> =
            sigmas.iter().enumerate().map(|(f, s)| self.fixed.get(&f).unwrap_or(s).matrix().clone()).collect();
        Ok(ev.eval_sigmas(&mats, false)?.0)
    }
}

/// Precomputed pieces of the objective.
struct Evaluator<'a> {
    p: &'a MrmfProblem,
    free: Vec<usize>,
    is_free: Vec<bool>,
    active: Vec<usize>,
    g: DMatrix<f64>,
    roots: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// Per active slot: reject points whose whitened mean crosses the fold.
    guard: Vec<bool>,
    d: usize,
    q: usize,
}

impl<'a> Evaluator<'a> {
    fn new(p: &'a MrmfProblem) -> Result<Self> {
        let free = p.free_fidelities();
        if free.is_empty() {
            return Err(Error::Invalid("every fidelity is pinned; nothing to estimate".into()));
        }
        for &f in &free {
            if p.structure.first_slot_of(f).is_none() {
                return Err(Error::InvalidStructure(format!("free fidelity {f} has no slot")));
            }
        }
        let active = p.active_slots();
        let g = p.gamma_inv.extract_block(&active, &active)?.into_matrix();
        let roots =
            active.iter().map(|&n| (p.data[n].sqrt_matrix().clone(), p.data[n].inv_sqrt_matrix().clone())).collect();
        let mut is_free = vec![false; p.structure.num_fidelities()];
        for &f in &free {
            is_free[f] = true;
        }
        let d = p.dim();
        let guard = vec![false; active.len()];
        Ok(Evaluator { p, free, is_free, active, g, roots, guard, d, q: tri_dim(d) })
    }

    fn eval_sigmas(
        &self,
        sigmas: &[DMatrix<f64>],
        want_grad: bool,
    ) -> Result<(ObjectiveValue, Option<Vec<DMatrix<f64>>>)> {
        let (d, q) = (self.d, self.q);
        let fid = self.p.structure.slot_fidelity();
        let mut v = DVector::zeros(self.active.len() * q);
        let mut spectra = Vec::with_capacity(if want_grad { self.active.len() } else { 0 });
        for (a, &n) in self.active.iter().enumerate() {
            let sigma = &sigmas[fid[n]];
            let mean = match &self.p.slot_maps[n] {
                Some(c) => c * sigma * c.transpose(),
                None => sigma.clone(),
            };
            let (sq, isq) = &self.roots[a];
            let mut sp = Spectral::of(&symmetrize(&(isq * mean * isq)));
            sp.values.apply(|x| *x = x.max(f64::MIN_POSITIVE));
            if self.guard[a] && sp.min() <= FOLD {
                return Err(Error::OutOfRange { name: "whitened mean eigenvalue", value: sp.min() });
            }
            let h = sp.map(|x| x * x.ln());
            let tangent = -symmetrize(&(sq * h * sq));
            v.rows_mut(a * q, q).copy_from(&flat_of(&tangent));
            if want_grad {
                spectra.push(sp);
            }
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tangent vectors"));
        }
        let gv = &self.g * &v;
        let mahalanobis = v.dot(&gv);

        let mut grads = want_grad.then(|| vec![DMatrix::zeros(d, d); sigmas.len()]);
        let mut penalty = 0.0;
        for &f in &self.free {
            let lambda = self.p.lambdas[f];
            if lambda == 0.0 {
                continue;
            }
            let r = self.p.penalty_maps[f].as_ref();
            let target = match r {
                Some(r) => r * &sigmas[f] * r.transpose(),
                None => sigmas[f].clone(),
            };
            let mut sp = Spectral::of(&symmetrize(&target));
            sp.values.apply(|x| *x = x.max(f64::MIN_POSITIVE));
            penalty += lambda * sp.values.iter().map(|x| x.ln().powi(2)).sum::<f64>();
            if let Some(gr) = grads.as_mut() {
                let dp = sp.map(|x| 2.0 * lambda * x.ln() / x);
                gr[f] += match r {
                    Some(r) => r.transpose() * dp * r,
                    None => dp,
                };
            }
        }

        if let Some(gr) = grads.as_mut() {
            for (a, &n) in self.active.iter().enumerate() {
                let f = fid[n];
                if !self.is_free[f] {
                    continue;
                }
                let (sq, isq) = &self.roots[a];
                let gn = unflat(&gv.as_slice()[a * q..(a + 1) * q], d) * 2.0;
                let dh = -(sq * gn * sq);
                let sp = &spectra[a];
                let dw = divided_difference_adjoint(sp, &dh, xlogx_divided_difference);
                let dmean = isq * dw * isq;
                gr[f] += match &self.p.slot_maps[n] {
                    Some(c) => c.transpose() * dmean * c,
                    None => dmean,
                };
            }
            for g in gr.iter_mut() {
                *g = symmetrize(g);
            }
        }
        Ok((ObjectiveValue { total: mahalanobis + penalty, mahalanobis, penalty }, grads))
    }

    /// Guard the slots of free, unpenalized fidelities whose whitened mean
    /// at `x` lies above the fold.
    fn guard_branches(&mut self, x: &DVector<f64>) {
        let (sigmas, _) = self.sigmas_from_roots(x);
        let fid = self.p.structure.slot_fidelity();
        self.guard = self
            .active
            .iter()
            .enumerate()
            .map(|(a, &n)| {
                if !self.is_free[fid[n]] || self.p.lambdas[fid[n]] != 0.0 {
                    return false;
                }
                let mean = match &self.p.slot_maps[n] {
                    Some(c) => c * &sigmas[fid[n]] * c.transpose(),
                    None => sigmas[fid[n]].clone(),
                };
                let isq = &self.roots[a].1;
                Spectral::of(&symmetrize(&(isq * mean * isq))).min() > FOLD
            })
            .collect();
    }

    /// Per-fidelity means from flat square-root coordinates.
    fn sigmas_from_roots(&self, x: &DVector<f64>) -> (Vec<DMatrix<f64>>, Vec<Spectral>) {
        let (d, q) = (self.d, self.q);
        let floor = self.p.settings.eigen_floor;
        let mut sigmas: Vec<DMatrix<f64>> = (0..self.p.structure.num_fidelities())
            .map(|f| self.p.fixed.get(&f).map(|s| s.matrix().clone()).unwrap_or_else(|| DMatrix::zeros(d, d)))
            .collect();
        let mut roots = Vec::with_capacity(self.free.len());
        for (i, &f) in self.free.iter().enumerate() {
            let sp = Spectral::of(&unflat(&x.as_slice()[i * q..(i + 1) * q], d));
            sigmas[f] = sp.map(|b| (b * b).max(floor));
            roots.push(sp);
        }
        (sigmas, roots)
    }

    fn eval_roots(&self, x: &DVector<f64>, want_grad: bool) -> Result<(ObjectiveValue, Option<DVector<f64>>)> {
        let (sigmas, roots) = self.sigmas_from_roots(x);
        let (value, grads) = self.eval_sigmas(&sigmas, want_grad)?;
        let Some(grads) = grads else { return Ok((value, None)) };
        let floor = self.p.settings.eigen_floor;
        let q = self.q;
        let mut out = DVector::zeros(x.len());
        for (i, &f) in self.free.iter().enumerate() {
            let db =
                divided_difference_adjoint(&roots[i], &grads[f], |a, b| floored_square_divided_difference(a, b, floor));
            out.rows_mut(i * q, q).copy_from(&flat_of(&db));
        }
        Ok((value, Some(out)))
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.eval_roots(x, false)?.0.total)
    }

    fn fd_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let q = self.q;
        let rel = self.p.settings.fd_relative_step;
        let mut g = DVector::zeros(x.len());
        let mut probe = x.clone();
        for i in 0..self.free.len() {
            let norm = x.rows(i * q, q).norm();
            let h = rel * (1.0 + norm);
            for k in i * q..(i + 1) * q {
                probe[k] = x[k] + h;
                let up = self.value(&probe)?;
                probe[k] = x[k] - h;
                let down = self.value(&probe)?;
                probe[k] = x[k];
                g[k] = (up - down) / (2.0 * h);
            }
        }
        Ok(g)
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        match self.p.settings.gradient {
            GradientMode::Analytic => {
                let (v, g) = self.eval_roots(x, true)?;
                Ok((v.total, g.expect("gradient requested")))
            }
            GradientMode::FiniteDifference => Ok((self.value(x)?, self.fd_gradient(x)?)),
        }
    }

    fn pack(&self, roots: &[SymMatrix]) -> Result<DVector<f64>> {
        check_dims(self.free.len(), roots.len())?;
        let q = self.q;
        let mut x = DVector::zeros(q * roots.len());
        for (i, b) in roots.iter().enumerate() {
            check_dims(self.d, b.dim())?;
            x.rows_mut(i * q, q).copy_from(&flat_of(b.matrix()));
        }
        Ok(x)
    }

    fn unpack(&self, x: &DVector<f64>) -> Vec<SymMatrix> {
        let q = self.q;
        (0..self.free.len())
            .map(|i| SymMatrix::from_symmetric_unchecked(unflat(&x.as_slice()[i * q..(i + 1) * q], self.d)))
            .collect()
    }
}

/// Minimizer of `x log x`.
const FOLD: f64 = 1.0 / std::f64::consts::E;

/// `(h(a) − h(b))/(a − b)` for `h(x) = x log x`, accurate for close arguments.
fn xlogx_divided_difference(a: f64, b: f64) -> f64 {
    if a == b {
        return a.ln() + 1.0;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    let t = (hi - lo) / lo;
    lo.ln() + (hi / lo) * (t.ln_1p() / t)
}

/// Divided difference of `b ↦ max(b², floor)`.
fn floored_square_divided_difference(a: f64, b: f64, floor: f64) -> f64 {
    let phi = |x: f64| (x * x).max(floor);
    let dphi = |x: f64| if x * x > floor { 2.0 * x } else { 0.0 };
    if a * a > floor && b * b > floor {
        return a + b;
    }
    if (a - b).abs() <= 1e-14 * (a.abs() + b.abs()) || a == b {
        return 0.5 * (dphi(a) + dphi(b));
    }
    (phi(a) - phi(b)) / (a - b)
}

/// Adjoint of the Fréchet derivative of a spectral function at
/// `Q diag(λ) Qᵀ`, applied to the symmetric matrix `h`.
fn divided_difference_adjoint(sp: &Spectral, h: &DMatrix<f64>, dd: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
    let q = &sp.vectors;
    let mut inner = q.transpose() * h * q;
    let n = inner.nrows();
    for i in 0..n {
        for j in 0..n {
            inner[(i, j)] *= dd(sp.values[i], sp.values[j]);
        }
    }
    symmetrize(&(q * inner * q.transpose()))
}

fn floored_estimate(root: &Spectral, floor: f64) -> Result<SpdMatrix> {
    let mut values = root.values.map(|b| (b * b).max(floor));
    let guard = 2.0 * pd_threshold(values.max());
    values.apply(|x| *x = x.max(guard));
    SpdMatrix::from_spectral(values, root.vectors.clone())
}

/// Minimize the penalized Mahalanobis objective over the free fidelities.
pub fn mrmf_solve(problem: &MrmfProblem) -> Result<EstimateReport> {
    let mut ev = Evaluator::new(problem)?;
    let starts: Vec<SymMatrix> = ev
        .free
        .iter()
        .map(|&f| {
            let plug_in = match problem.initial.get(&f) {
                Some(s) => s,
                None => &problem.data[problem.structure.first_slot_of(f).expect("checked in Evaluator::new")],
            };
            plug_in.sqrt().to_sym()
        })
        .collect();
    let x0 = ev.pack(&starts)?;
    if problem.settings.principal_branch {
        ev.guard_branches(&x0);
    }
    let result = gradient_descent(x0, &problem.settings.descent, |x| ev.value_and_gradient(x))?;

    let (_, roots) = ev.sigmas_from_roots(&result.x);
    let mut estimates: Vec<Option<SpdMatrix>> =
        (0..problem.structure.num_fidelities()).map(|f| problem.fixed.get(&f).cloned()).collect();
    for (i, &f) in ev.free.iter().enumerate() {
        estimates[f] = Some(floored_estimate(&roots[i], problem.settings.eigen_floor)?);
    }
    let value = ev.eval_roots(&result.x, false)?.0;
    Ok(EstimateReport {
        estimates: estimates.into_iter().map(|e| e.expect("every fidelity is free or pinned")).collect(),
        objective_value: value.total,
        mahalanobis_value: value.mahalanobis,
        iterations: result.iterations,
        converged: result.converged,
        gradient_norm: result.gradient_norm,
    })
}

/// Gradient with respect to the flat coordinates of each free square root,
/// computed with the problem's configured [`GradientMode`].
pub fn mrmf_gradient(problem: &MrmfProblem, roots: &[SymMatrix]) -> Result<Vec<SymMatrix>> {
    match problem.settings.gradient {
        GradientMode::Analytic => mrmf_gradient_analytic(problem, roots),
        GradientMode::FiniteDifference => mrmf_gradient_fd(problem, roots, problem.settings.fd_relative_step),
    }
}

pub fn mrmf_gradient_analytic(problem: &MrmfProblem, roots: &[SymMatrix]) -> Result<Vec<SymMatrix>> {
    let ev = Evaluator::new(problem)?;
    let x = ev.pack(roots)?;
    let g = ev.eval_roots(&x, true)?.1.expect("gradient requested");
    Ok(ev.unpack(&g))
}

/// Central differences with step `rel·(1 + ‖B_ℓ‖_F)` per coordinate.
pub fn mrmf_gradient_fd(problem: &MrmfProblem, roots: &[SymMatrix], rel: f64) -> Result<Vec<SymMatrix>> {
    let mut local = problem.clone();
    local.settings.fd_relative_step = rel;
    let ev = Evaluator::new(&local)?;
    let x = ev.pack(roots)?;
    Ok(ev.unpack(&ev.fd_gradient(&x)?))
}

/// Maps between the original and the whitened coordinates of a problem.
#[derive(Clone, Debug)]
pub struct Preconditioner {
    /// `S_r^{1/2}` for the first slot `r` of each fidelity.
    roots: Vec<Option<SpdMatrix>>,
}

impl Preconditioner {
    /// `Σ̃_ℓ = Y_ℓ⁻¹ Σ_ℓ Y_ℓ⁻¹`.
    pub fn to_transformed(&self, sigmas: &[SpdMatrix]) -> Result<Vec<SpdMatrix>> {
        check_dims(self.roots.len(), sigmas.len())?;
        sigmas
            .iter()
            .zip(&self.roots)
            .map(|(s, y)| match y {
                Some(y) => s.congruence_by(y),
                None => Ok(s.clone()),
            })
            .collect()
    }

    /// `Σ_ℓ = Y_ℓ Σ̃_ℓ Y_ℓ`.
    pub fn to_original(&self, sigmas: &[SpdMatrix]) -> Result<Vec<SpdMatrix>> {
        check_dims(self.roots.len(), sigmas.len())?;
        sigmas
            .iter()
            .zip(&self.roots)
            .map(|(s, y)| match y {
                Some(y) => SpdMatrix::new(symmetrize(&(y.matrix() * s.matrix() * y.matrix()))),
                None => Ok(s.clone()),
            })
            .collect()
    }

    pub fn restore(&self, mut report: EstimateReport) -> Result<EstimateReport> {
        report.estimates = self.to_original(&report.estimates)?;
        Ok(report)
    }
}

/// Rewrite the problem so that every data slot is the identity.
///
/// With `Y_n = S_n^{1/2}` the data become `Y_n⁻¹ S_n Y_n⁻¹ = I` and the
/// inverse covariance becomes `G_Y⁻¹ Γ⁻¹ G_Y⁻¹`. Each fidelity is
/// reparameterized through its first slot `r`, `Σ̃ = Y_r⁻¹ Σ Y_r⁻¹`, so a
/// later slot `n` of the same fidelity has mean `B Σ̃ Bᵀ` with
/// `B = Y_n⁻¹ Y_r`. The penalty is still charged on the original `Σ`.
pub fn precondition(problem: &MrmfProblem) -> Result<(MrmfProblem, Preconditioner)> {
    let ys: Vec<SpdMatrix> = problem.data.iter().map(SpdMatrix::sqrt).collect();
    let (mut p, pre) = precondition_with(problem, &ys)?;
    p.data = vec![SpdMatrix::identity(problem.dim()); ys.len()];
    Ok((p, pre))
}

/// The same change of variables with arbitrary per-slot factors `Y_n`; the
/// data become `Y_n⁻¹ S_n Y_n⁻¹`.
///
/// Whitening by the data divides by them, which costs accuracy when a data
/// slot is nearly singular. A slot whose fidelity is pinned can instead be
/// whitened by the square root of the pinned value.
pub fn precondition_with(problem: &MrmfProblem, ys: &[SpdMatrix]) -> Result<(MrmfProblem, Preconditioner)> {
    let s = &problem.structure;
    let d = problem.dim();
    check_dims(s.slot_count(), ys.len())?;
    for y in ys {
        check_dims(d, y.dim())?;
    }
    let y_invs: Vec<SpdMatrix> = ys.iter().map(SpdMatrix::inverse).collect();
    let back = build_congruence_operator(&y_invs)?;
    let gi = back.matrix() * problem.gamma_inv.matrix() * back.matrix();
    let mut gamma_inv = TangentOperator::new(d, s.slot_count(), symmetrize(&gi))?;
    if let Some(st) = problem.gamma_inv.structure() {
        gamma_inv = gamma_inv.with_structure(st.clone())?;
    }

    let roots: Vec<Option<SpdMatrix>> =
        (0..s.num_fidelities()).map(|f| s.first_slot_of(f).map(|r| ys[r].clone())).collect();
    let pre = Preconditioner { roots };

    let slot_maps = (0..s.slot_count())
        .map(|n| {
            let f = s.slot_fidelity()[n];
            let r = s.first_slot_of(f).expect("slot carries its own fidelity");
            let yr = ys[r].matrix();
            let yn_inv = y_invs[n].matrix();
            match (&problem.slot_maps[n], n == r) {
                (None, true) => None,
                (None, false) => Some(yn_inv * yr),
                (Some(c), _) => Some(yn_inv * c * yr),
            }
        })
        .collect();
    let penalty_maps = (0..s.num_fidelities())
        .map(|f| match (&pre.roots[f], &problem.penalty_maps[f]) {
            (Some(y), Some(r)) => Some(r * y.matrix()),
            (Some(y), None) => Some(y.matrix().clone()),
            (None, r) => r.clone(),
        })
        .collect();
    let transform = |m: &BTreeMap<usize, SpdMatrix>| -> Result<BTreeMap<usize, SpdMatrix>> {
        m.iter()
            .map(|(&f, v)| {
                let t = match &pre.roots[f] {
                    Some(y) => v.congruence_by(y)?,
                    None => v.clone(),
                };
                Ok((f, t))
            })
            .collect()
    };

    let data = problem.data.iter().zip(ys).map(|(x, y)| x.congruence_by(y)).collect::<Result<_>>()?;
    let transformed = MrmfProblem {
        structure: s.clone(),
        data,
        gamma_inv,
        lambdas: problem.lambdas.clone(),
        fixed: transform(&problem.fixed)?,
        initial: transform(&problem.initial)?,
        settings: problem.settings.clone(),
        slot_maps,
        penalty_maps,
    };
    Ok((transformed, pre))
}
