//! Data generators: coupled Gaussian high/low-fidelity models, the
//! exponential-wrapped Gaussian on stacks of SPD matrices, and a labelled
//! two-class mixture with a noisy low-fidelity observable.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::estimators::{scm, SampleCovariance};
use crate::fidelity::FidelityStructure;
use crate::spd::{check_dims, riemannian_exp, SpdMatrix, SymMatrix};
use crate::tangent::{build_congruence_operator, tri_dim, unflat, TangentOperator};

pub fn standard_normal_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// `AᵀA` with `A` a d×d standard normal matrix (redrawn in the null-probability
/// event that the result is numerically singular).
pub fn wishart<R: Rng + ?Sized>(d: usize, rng: &mut R) -> SpdMatrix {
    loop {
        let a = standard_normal_matrix(d, d, rng);
        if let Ok(s) = SpdMatrix::new(a.transpose() * a) {
            return s;
        }
    }
}

/// Haar-random orthogonal rotation with eigenvalues `exp(u)`,
/// `u ~ Uniform(−spread, spread)`.
pub fn random_spd<R: Rng + ?Sized>(d: usize, spread: f64, rng: &mut R) -> SpdMatrix {
    let q = random_orthogonal(d, rng);
    let u = Uniform::new_inclusive(-spread, spread).expect("valid range");
    let values = DVector::from_fn(d, |_, _| u.sample(rng).exp());
    let mut scaled = q.clone();
    for j in 0..d {
        scaled.column_mut(j).scale_mut(values[j]);
    }
    SpdMatrix::new(scaled * q.transpose()).expect("positive spectrum")
}

/// Random symmetric matrix with standard normal entries on and above the
/// diagonal, scaled by `scale`.
pub fn random_sym<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> SymMatrix {
    let a = standard_normal_matrix(d, d, rng);
    SymMatrix::new((&a + a.transpose()) * (0.5 * scale)).expect("square")
}

fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let qr = standard_normal_matrix(d, d, rng).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Factor `L` with `L Lᵀ = Σ` for a symmetric positive semidefinite `Σ`.
fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.min() < -1e-10 * scale {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: eig.eigenvalues.min() });
    }
    let mut f = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        f.column_mut(j).scale_mut(l.max(0.0).sqrt());
    }
    Ok(f)
}

/// `X_lo = X_hi + ε` with `X_hi ~ N(0, Σ_hi)` and `ε ~ N(0, σ² I)`.
#[derive(Clone, Debug)]
pub struct GaussianCoupledModel {
    sigma_hi: SpdMatrix,
    noise_var: f64,
    factor: DMatrix<f64>,
}

impl GaussianCoupledModel {
    pub fn new(sigma_hi: SpdMatrix, noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0) || !noise_var.is_finite() {
            return Err(Error::OutOfRange { name: "noise_var", value: noise_var });
        }
        let factor = sigma_hi.sqrt_matrix().clone();
        Ok(GaussianCoupledModel { sigma_hi, noise_var, factor })
    }

    pub fn dim(&self) -> usize {
        self.sigma_hi.dim()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn sigma_hi(&self) -> &SpdMatrix {
        &self.sigma_hi
    }

    /// `Σ_hi + σ² I`.
    pub fn sigma_lo(&self) -> SpdMatrix {
        let d = self.dim();
        SpdMatrix::new(self.sigma_hi.matrix() + DMatrix::identity(d, d) * self.noise_var).expect("SPD plus PSD")
    }

    /// Covariance of `(X_hi, X_lo)`.
    pub fn joint_covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut j = DMatrix::zeros(2 * d, 2 * d);
        let s = self.sigma_hi.matrix();
        j.view_mut((0, 0), (d, d)).copy_from(s);
        j.view_mut((0, d), (d, d)).copy_from(s);
        j.view_mut((d, 0), (d, d)).copy_from(s);
        j.view_mut((d, d), (d, d)).copy_from(&self.sigma_lo().into_matrix());
        j
    }

    pub fn draw_high<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        &self.factor * standard_normal_vector(self.dim(), rng)
    }

    pub fn draw_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let hi = self.draw_high(rng);
        let lo = &hi + standard_normal_vector(self.dim(), rng) * self.noise_var.sqrt();
        (hi, lo)
    }

    pub fn draw_low<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.draw_pair(rng).1
    }
}

/// Split of a budget into coupled pairs and extra low-fidelity samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetAllocation {
    pub c_hi: f64,
    pub c_lo: f64,
    pub budget: f64,
    /// Coupled (high, low) pairs.
    pub m1: usize,
    /// Extra independent low-fidelity samples.
    pub m2: usize,
}

/// Guards `floor` against ratios like `0.6/0.01 = 59.999…`.
fn robust_floor(x: f64) -> usize {
    (x * (1.0 + 1e-12)).floor().max(0.0) as usize
}

impl BudgetAllocation {
    pub fn new(c_hi: f64, c_lo: f64, budget: f64, m1: usize, m2: usize) -> Result<Self> {
        for (name, v) in [("c_hi", c_hi), ("c_lo", c_lo), ("budget", budget)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::OutOfRange { name, value: v });
            }
        }
        if m1 < 2 {
            return Err(Error::InsufficientSamples { required: 2, found: m1 });
        }
        let a = BudgetAllocation { c_hi, c_lo, budget, m1, m2 };
        if a.cost() > budget * (1.0 + 1e-12) {
            return Err(Error::Invalid(format!("allocation costs {} but the budget is {budget}", a.cost())));
        }
        Ok(a)
    }

    /// `M1 = ⌊ρB/(c_hi + c_lo)⌋`, `M2 = ⌊(1 − ρ)B/c_lo⌋`.
    pub fn from_fraction(c_hi: f64, c_lo: f64, budget: f64, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::OutOfRange { name: "rho", value: rho });
        }
        let m1 = robust_floor(rho * budget / (c_hi + c_lo));
        let m2 = robust_floor((1.0 - rho) * budget / c_lo);
        Self::new(c_hi, c_lo, budget, m1, m2)
    }

    /// `M1(c_hi + c_lo) + M2·c_lo`.
    pub fn cost(&self) -> f64 {
        self.m1 as f64 * (self.c_hi + self.c_lo) + self.m2 as f64 * self.c_lo
    }

    /// High-fidelity samples affordable with the whole budget.
    pub fn high_only_count(&self) -> usize {
        robust_floor(self.budget / self.c_hi)
    }

    /// Low-fidelity samples affordable with the whole budget.
    pub fn low_only_count(&self) -> usize {
        robust_floor(self.budget / self.c_lo)
    }
}

/// Sample covariances of one coupled draw.
#[derive(Clone, Debug)]
pub struct CoupledScms {
    pub s_hi: SampleCovariance,
    pub s_lo1: SampleCovariance,
    /// Absent when fewer than two extra low-fidelity samples were drawn.
    pub s_lo2: Option<SampleCovariance>,
    /// Pooled over all `M1 + M2` low-fidelity samples.
    pub s_lo_bar: SampleCovariance,
}

pub fn draw_coupled_scms<R: Rng + ?Sized>(
    model: &GaussianCoupledModel,
    alloc: &BudgetAllocation,
    rng: &mut R,
) -> Result<CoupledScms> {
    if alloc.m1 < 2 {
        return Err(Error::InsufficientSamples { required: 2, found: alloc.m1 });
    }
    let (hi, lo1): (Vec<_>, Vec<_>) = (0..alloc.m1).map(|_| model.draw_pair(rng)).unzip();
    let lo2: Vec<_> = (0..alloc.m2).map(|_| model.draw_low(rng)).collect();
    let s_lo2 = if lo2.len() >= 2 { Some(scm(&lo2)?) } else { None };
    let pooled: Vec<_> = lo1.iter().chain(&lo2).cloned().collect();
    Ok(CoupledScms { s_hi: scm(&hi)?, s_lo1: scm(&lo1)?, s_lo2, s_lo_bar: scm(&pooled)? })
}

/// Sampler of `N(0, Γ)` in flat coordinates.
#[derive(Clone, Debug)]
pub struct TangentGaussian {
    dim: usize,
    count: usize,
    factor: DMatrix<f64>,
}

impl TangentGaussian {
    pub fn new(gamma: &TangentOperator) -> Result<Self> {
        if !gamma.is_square() {
            return Err(Error::Invalid("covariance operator must be square".into()));
        }
        Ok(TangentGaussian { dim: gamma.dim(), count: gamma.count(), factor: psd_factor(gamma.matrix())? })
    }

    pub fn sample_flat<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        &self.factor * standard_normal_vector(self.factor.ncols(), rng)
    }

    /// `exp_{Σ_n}(E_n)` per slot.
    pub fn sample_wrapped<R: Rng + ?Sized>(&self, means: &[SpdMatrix], rng: &mut R) -> Result<Vec<SpdMatrix>> {
        check_dims(self.count, means.len())?;
        let q = tri_dim(self.dim);
        let e = self.sample_flat(rng);
        means
            .iter()
            .enumerate()
            .map(|(n, m)| {
                check_dims(self.dim, m.dim())?;
                let x = SymMatrix::new(unflat(&e.as_slice()[n * q..(n + 1) * q], self.dim))?;
                riemannian_exp(m, &x)
            })
            .collect()
    }
}

/// One draw of the exponential-wrapped Gaussian: `S_n = exp_{Σ_n}(E_n)` with
/// flat `E ~ N(0, Γ)`.
pub fn draw_wrapped_gaussian<R: Rng + ?Sized>(
    means: &[SpdMatrix],
    gamma: &TangentOperator,
    rng: &mut R,
) -> Result<Vec<SpdMatrix>> {
    TangentGaussian::new(gamma)?.sample_wrapped(means, rng)
}

/// Covariance operator whose group blocks are `R ⊗ C` with
/// `R = (1 − ρ)I + ρ11ᵀ` over the slots of the group, and zero across groups.
/// `C` is a q×q covariance shared by all slots.
pub fn correlated_group_operator(
    structure: &FidelityStructure,
    base: &DMatrix<f64>,
    correlation: f64,
) -> Result<TangentOperator> {
    let q = base.nrows();
    let d = ((((8 * q + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    check_dims(q, tri_dim(d))?;
    if !(0.0..=1.0).contains(&correlation) {
        return Err(Error::OutOfRange { name: "correlation", value: correlation });
    }
    let n = structure.slot_count();
    let mut m = DMatrix::zeros(n * q, n * q);
    for a in 0..n {
        for b in 0..n {
            if structure.slot_group()[a] != structure.slot_group()[b] {
                continue;
            }
            let c = if a == b { 1.0 } else { correlation };
            m.view_mut((a * q, b * q), (q, q)).copy_from(&(base * c));
        }
    }
    TangentOperator::new(d, n, m)?.with_structure(structure.clone())
}

/// Exponential-wrapped Gaussian on a fidelity structure: slot `n` is
/// `exp_{Σ_{f(n)}}(E_n)` with flat `E ~ N(0, Γ)`.
#[derive(Clone, Debug)]
pub struct WrappedGaussianModel {
    structure: FidelityStructure,
    means: Vec<SpdMatrix>,
    gamma: TangentOperator,
    sampler: TangentGaussian,
}

impl WrappedGaussianModel {
    pub fn new(structure: FidelityStructure, means: Vec<SpdMatrix>, gamma: TangentOperator) -> Result<Self> {
        check_dims(structure.num_fidelities(), means.len())?;
        check_dims(structure.slot_count(), gamma.count())?;
        let sampler = TangentGaussian::new(&gamma)?;
        Ok(WrappedGaussianModel { structure, means, gamma, sampler })
    }

    pub fn structure(&self) -> &FidelityStructure {
        &self.structure
    }

    /// Per-fidelity Fréchet means.
    pub fn means(&self) -> &[SpdMatrix] {
        &self.means
    }

    pub fn slot_means(&self) -> Vec<SpdMatrix> {
        self.structure.slot_fidelity().iter().map(|&f| self.means[f].clone()).collect()
    }

    pub fn gamma(&self) -> &TangentOperator {
        &self.gamma
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<SpdMatrix>> {
        self.sampler.sample_wrapped(&self.slot_means(), rng)
    }

    /// A draw together with its tangent vector `E`.
    pub fn draw_with_tangent<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Vec<SpdMatrix>, DVector<f64>)> {
        let q = tri_dim(self.gamma.dim());
        let e = self.sampler.sample_flat(rng);
        let data = self
            .slot_means()
            .iter()
            .enumerate()
            .map(|(n, m)| riemannian_exp(m, &SymMatrix::new(unflat(&e.as_slice()[n * q..(n + 1) * q], m.dim()))?))
            .collect::<Result<Vec<_>>>()?;
        Ok((data, e))
    }
}

/// Random instance of the running example: slots `(S_hi, S¹_lo, S²_lo)` with
/// `S_hi` and `S¹_lo` coupled by `correlation` and `S²_lo` independent.
///
/// Noise is drawn in whitened coordinates, `E_n = Σ_n^{1/2} Z_n Σ_n^{1/2}`,
/// where `Z` has the correlated group covariance with mean eigenvalue
/// `noise_scale²` per slot.
pub fn running_example_model<R: Rng + ?Sized>(
    d: usize,
    noise_scale: f64,
    correlation: f64,
    rng: &mut R,
) -> Result<WrappedGaussianModel> {
    let structure = FidelityStructure::running_example();
    let q = tri_dim(d);
    let base = random_spd(q, 0.5, rng).into_matrix();
    let base = &base * (noise_scale * noise_scale * q as f64 / base.trace());
    let white = correlated_group_operator(&structure, &base, correlation)?;
    let means = vec![random_spd(d, 1.0, rng), random_spd(d, 1.0, rng)];
    let inv_roots: Vec<SpdMatrix> = structure.slot_fidelity().iter().map(|&f| means[f].inv_sqrt()).collect();
    let g = build_congruence_operator(&inv_roots)?;
    let gamma = g.compose(&white)?.compose(&g)?;
    let gamma = TangentOperator::new(d, structure.slot_count(), crate::spd::symmetrize(gamma.matrix()))?
        .with_structure(structure.clone())?;
    WrappedGaussianModel::new(structure, means, gamma)
}

/// Low-fidelity corruption `y_lo = y + η`, `η ~ N(bias, Σ_η)`.
#[derive(Clone, Debug)]
pub struct LowFidelityNoise {
    pub bias: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl LowFidelityNoise {
    pub fn isotropic(d: usize, variance: f64) -> Self {
        LowFidelityNoise { bias: DVector::zeros(d), covariance: DMatrix::identity(d, d) * variance }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDraw {
    pub class: usize,
    pub y: DVector<f64>,
    pub y_lo: DVector<f64>,
}

/// Equal-weight mixture of `N(m_0, Γ_0)` and `N(m_1, Γ_1)`.
#[derive(Clone, Debug)]
pub struct TwoClassMixture {
    means: [DVector<f64>; 2],
    covariances: [SpdMatrix; 2],
    factors: [DMatrix<f64>; 2],
    noise: LowFidelityNoise,
    noise_factor: DMatrix<f64>,
}

impl TwoClassMixture {
    pub fn new(means: [DVector<f64>; 2], covariances: [SpdMatrix; 2], noise: LowFidelityNoise) -> Result<Self> {
        let d = covariances[0].dim();
        check_dims(d, covariances[1].dim())?;
        check_dims(d, means[0].len())?;
        check_dims(d, means[1].len())?;
        check_dims(d, noise.bias.len())?;
        check_dims(d, noise.covariance.nrows())?;
        let factors = [covariances[0].sqrt_matrix().clone(), covariances[1].sqrt_matrix().clone()];
        let noise_factor = psd_factor(&noise.covariance)?;
        Ok(TwoClassMixture { means, covariances, factors, noise, noise_factor })
    }

    pub fn dim(&self) -> usize {
        self.covariances[0].dim()
    }

    pub fn mean(&self, class: usize) -> &DVector<f64> {
        &self.means[class]
    }

    pub fn covariance(&self, class: usize) -> &SpdMatrix {
        &self.covariances[class]
    }

    pub fn noise(&self) -> &LowFidelityNoise {
        &self.noise
    }

    /// Covariance of the low-fidelity observable within `class`.
    pub fn low_covariance(&self, class: usize) -> SpdMatrix {
        SpdMatrix::new(self.covariances[class].matrix() + &self.noise.covariance).expect("SPD plus PSD")
    }

    pub fn sample_class<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> LabeledDraw {
        let d = self.dim();
        let y = &self.means[class] + &self.factors[class] * standard_normal_vector(d, rng);
        let y_lo = &y + &self.noise.bias + &self.noise_factor * standard_normal_vector(d, rng);
        LabeledDraw { class, y, y_lo }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledDraw {
        let class = usize::from(rng.random::<bool>());
        self.sample_class(class, rng)
    }
}

/// Mixture with class means `±(separation/2)·u` for a random unit vector `u`.
pub fn make_two_class_mixture<R: Rng + ?Sized>(
    d: usize,
    separation: f64,
    covariances: [SpdMatrix; 2],
    noise: LowFidelityNoise,
    rng: &mut R,
) -> Result<TwoClassMixture> {
    let mut u = standard_normal_vector(d, rng);
    u /= u.norm();
    let half = u * (0.5 * separation);
    TwoClassMixture::new([-half.clone(), half], covariances, noise)
}
