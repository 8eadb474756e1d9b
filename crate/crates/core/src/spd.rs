//! Affine-invariant geometry of the SPD cone.
//!
//! Every matrix function goes through a symmetric eigendecomposition. The
//! decomposition of an [`SpdMatrix`] is computed once and cached, so repeated
//! log/exp/power calls at the same base point cost a few matrix products.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor used to decide positive definiteness.
pub const PD_TOLERANCE: f64 = 1e-12;

/// Smallest eigenvalue an SPD matrix of this spectrum may have.
pub fn pd_threshold(max_eigenvalue: f64) -> f64 {
    PD_TOLERANCE * max_eigenvalue.max(1.0)
}

#[derive(Clone, Debug)]
pub(crate) struct Spectral {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectral {
    pub(crate) fn of(m: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(m.clone());
        Spectral { values: eig.eigenvalues, vectors: eig.eigenvectors }
    }

    /// `Q diag(f(λ)) Qᵀ`, symmetrized.
    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &l) in self.values.iter().enumerate() {
            let fl = f(l);
            scaled.column_mut(j).scale_mut(fl);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    pub(crate) fn min(&self) -> f64 {
        self.values.min()
    }

    pub(crate) fn max(&self) -> f64 {
        self.values.max()
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.nrows() == 0 {
        return Err(Error::Invalid("matrix dimension must be positive".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix entries"));
    }
    Ok(())
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// A real symmetric matrix; a tangent vector at any point of the SPD cone.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `(M + Mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        Ok(SymMatrix(symmetrize(&m)))
    }

    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        SymMatrix(m)
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Frobenius inner product `tr(XY)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    /// Apply a scalar function through the eigendecomposition.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
        let out = Spectral::of(&self.0).map(f);
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("spectral function"));
        }
        Ok(SymMatrix(out))
    }

    /// Matrix exponential; always SPD.
    pub fn exp(&self) -> Result<SpdMatrix> {
        let sp = Spectral::of(&self.0);
        let values = sp.values.map(f64::exp);
        SpdMatrix::from_spectral(values, sp.vectors)
    }

    /// Validate as SPD.
    pub fn to_spd(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(self.0.clone())
    }
}

/// A symmetric positive definite matrix with a cached eigendecomposition.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    eig: OnceLock<Spectral>,
    sqrt: OnceLock<DMatrix<f64>>,
    inv_sqrt: OnceLock<DMatrix<f64>>,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
    }
}

impl SpdMatrix {
    /// Symmetrizes the input and checks `λ_min > 1e-12·max(1, λ_max)`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let mat = symmetrize(&m);
        let sp = Spectral::of(&mat);
        let (lo, hi) = (sp.min(), sp.max());
        if !(lo > pd_threshold(hi)) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: lo });
        }
        Ok(SpdMatrix { mat, eig: OnceLock::from(sp), sqrt: OnceLock::new(), inv_sqrt: OnceLock::new() })
    }

    pub fn identity(d: usize) -> Self {
        Self::from_spectral(DVector::from_element(d, 1.0), DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Build `Q diag(λ) Qᵀ` from an orthonormal `Q`, keeping the decomposition.
    pub(crate) fn from_spectral(values: DVector<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("eigenvalues"));
        }
        let (lo, hi) = (values.min(), values.max());
        if !(lo > pd_threshold(hi)) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: lo });
        }
        let sp = Spectral { values, vectors };
        let mat = sp.map(|x| x);
        Ok(SpdMatrix { mat, eig: OnceLock::from(sp), sqrt: OnceLock::new(), inv_sqrt: OnceLock::new() })
    }

    pub(crate) fn spectral(&self) -> &Spectral {
        self.eig.get_or_init(|| Spectral::of(&self.mat))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix(self.mat.clone())
    }

    /// Eigenvalues in the order produced by the decomposition.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.spectral().values
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.spectral().vectors
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.spectral().min()
    }

    pub fn condition_number(&self) -> f64 {
        self.spectral().max() / self.spectral().min()
    }

    /// Principal square root as a raw matrix (cached).
    pub fn sqrt_matrix(&self) -> &DMatrix<f64> {
        self.sqrt.get_or_init(|| self.spectral().map(f64::sqrt))
    }

    /// Inverse principal square root as a raw matrix (cached).
    pub fn inv_sqrt_matrix(&self) -> &DMatrix<f64> {
        self.inv_sqrt.get_or_init(|| self.spectral().map(|x| 1.0 / x.sqrt()))
    }

    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        self.spectral().map(|x| 1.0 / x)
    }

    fn spectral_spd(&self, f: impl Fn(f64) -> f64) -> Result<SpdMatrix> {
        let sp = self.spectral();
        SpdMatrix::from_spectral(sp.values.map(f), sp.vectors.clone())
    }

    pub fn sqrt(&self) -> SpdMatrix {
        self.spectral_spd(f64::sqrt).expect("square root of SPD is SPD")
    }

    pub fn inv_sqrt(&self) -> SpdMatrix {
        self.spectral_spd(|x| 1.0 / x.sqrt()).expect("inverse square root of SPD is SPD")
    }

    pub fn inverse(&self) -> SpdMatrix {
        self.spectral_spd(|x| 1.0 / x).expect("inverse of SPD is SPD")
    }

    /// Real matrix power `A^t`.
    pub fn powf(&self, t: f64) -> Result<SpdMatrix> {
        self.spectral_spd(|x| x.powf(t))
    }

    /// Principal matrix logarithm.
    pub fn log(&self) -> SymMatrix {
        SymMatrix(self.spectral().map(f64::ln))
    }
}

/// `Q diag(f(λ)) Qᵀ` for `A = Q diag(λ) Qᵀ`.
pub fn spd_function(a: &SpdMatrix, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
    let out = a.spectral().map(f);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spectral function"));
    }
    Ok(SymMatrix(out))
}

fn sandwich(p: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(p * m * p))
}

/// `A^{-1/2} B A^{-1/2}` as a symmetric matrix.
fn whiten(a: &SpdMatrix, b: &DMatrix<f64>) -> DMatrix<f64> {
    sandwich(a.inv_sqrt_matrix(), b)
}

/// `log_A(B) = A^{1/2} log(A^{-1/2} B A^{-1/2}) A^{1/2}`.
pub fn riemannian_log(a: &SpdMatrix, b: &SpdMatrix) -> Result<SymMatrix> {
    check_dims(a.dim(), b.dim())?;
    let inner = Spectral::of(&whiten(a, b.matrix()));
    if inner.min() <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: inner.min() });
    }
    let l = inner.map(f64::ln);
    Ok(SymMatrix(sandwich(a.sqrt_matrix(), &l)))
}

/// `exp_A(X) = A^{1/2} exp(A^{-1/2} X A^{-1/2}) A^{1/2}`.
pub fn riemannian_exp(a: &SpdMatrix, x: &SymMatrix) -> Result<SpdMatrix> {
    check_dims(a.dim(), x.dim())?;
    let e = Spectral::of(&whiten(a, x.matrix())).map(f64::exp);
    SpdMatrix::new(sandwich(a.sqrt_matrix(), &e))
}

/// Point at parameter `t` on the geodesic from `A` (t = 0) to `B` (t = 1).
pub fn geodesic(a: &SpdMatrix, b: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    check_dims(a.dim(), b.dim())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange { name: "t", value: t });
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 {
        return Ok(b.clone());
    }
    let p = Spectral::of(&whiten(a, b.matrix())).map(|x| x.powf(t));
    SpdMatrix::new(sandwich(a.sqrt_matrix(), &p))
}

/// `sqrt(Σ log² λ_i(A⁻¹B))`.
pub fn intrinsic_distance(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let w = whiten(a, b.matrix());
    let values = SymmetricEigen::new(w).eigenvalues;
    if values.min() <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: values.min() });
    }
    Ok(values.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

/// Types closed under `A ↦ Y⁻¹ A Y⁻¹`.
pub trait Congruence: Sized {
    fn congruence_by(&self, y: &SpdMatrix) -> Result<Self>;
}

impl Congruence for SymMatrix {
    fn congruence_by(&self, y: &SpdMatrix) -> Result<Self> {
        check_dims(y.dim(), self.dim())?;
        Ok(SymMatrix(sandwich(&y.inverse_matrix(), &self.0)))
    }
}

impl Congruence for SpdMatrix {
    fn congruence_by(&self, y: &SpdMatrix) -> Result<Self> {
        check_dims(y.dim(), self.dim())?;
        SpdMatrix::new(sandwich(&y.inverse_matrix(), &self.mat))
    }
}

/// `Y⁻¹ A Y⁻¹`.
pub fn congruence<T: Congruence>(y: &SpdMatrix, a: &T) -> Result<T> {
    a.congruence_by(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    fn a2() -> SpdMatrix {
        SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap()
    }

    #[test]
    fn log_of_identity_is_zero() {
        let l = spd_function(&SpdMatrix::identity(3), f64::ln).unwrap();
        assert_eq!(l.matrix(), &DMatrix::zeros(3, 3));
    }

    #[test]
    fn diagonal_sqrt() {
        let a = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let s = spd_function(&a, f64::sqrt).unwrap();
        assert!(rel(s.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))) < 1e-15);
    }

    #[test]
    fn exp_log_inverse_pair() {
        let a = a2();
        let back = a.log().exp().unwrap();
        assert!(rel(back.matrix(), a.matrix()) < 1e-12);
    }

    #[test]
    fn identity_function_reproduces_input() {
        let a = a2();
        let same = spd_function(&a, |x| x).unwrap();
        assert!(rel(same.matrix(), a.matrix()) < 1e-15);
    }

    #[test]
    fn log_at_self_is_zero() {
        let a = a2();
        assert!(riemannian_log(&a, &a).unwrap().frobenius_norm() < 1e-14);
    }

    #[test]
    fn log_at_identity_diagonal() {
        let b = SpdMatrix::from_diagonal(&[E, E * E]).unwrap();
        let l = riemannian_log(&SpdMatrix::identity(2), &b).unwrap();
        assert!(rel(l.matrix(), SymMatrix::from_diagonal(&[1.0, 2.0]).matrix()) < 1e-14);
    }

    #[test]
    fn exp_of_zero_and_at_identity() {
        let a = a2();
        let same = riemannian_exp(&a, &SymMatrix::zeros(2)).unwrap();
        assert!(rel(same.matrix(), a.matrix()) < 1e-14);
        let e = riemannian_exp(&SpdMatrix::identity(2), &SymMatrix::from_diagonal(&[1.0, 2.0])).unwrap();
        assert!(rel(e.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![E, E * E]))) < 1e-14);
    }

    #[test]
    fn geodesic_diagonal_midpoint_and_endpoints() {
        let i = SpdMatrix::identity(2);
        let b = SpdMatrix::from_diagonal(&[4.0, 16.0]).unwrap();
        let m = geodesic(&i, &b, 0.5).unwrap();
        assert!(rel(m.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]))) < 1e-14);
        assert_eq!(geodesic(&i, &b, 0.0).unwrap(), i);
        assert_eq!(geodesic(&i, &b, 1.0).unwrap(), b);
        assert!(matches!(geodesic(&i, &b, 1.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn distance_reads_off_diagonal() {
        let b = SpdMatrix::from_diagonal(&[E * E, 1.0 / (E * E)]).unwrap();
        let d = intrinsic_distance(&SpdMatrix::identity(2), &b).unwrap();
        assert!((d - 8f64.sqrt()).abs() < 1e-14);
        assert_eq!(intrinsic_distance(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn congruence_by_own_root_gives_identity() {
        let a = a2();
        let i: SpdMatrix = congruence(&a.sqrt(), &a).unwrap();
        assert!(rel(i.matrix(), &DMatrix::identity(2, 2)) < 1e-14);
        let same: SpdMatrix = congruence(&SpdMatrix::identity(2), &a).unwrap();
        assert!(rel(same.matrix(), a.matrix()) < 1e-15);
    }

    #[test]
    fn construction_rejects_indefinite_and_mismatch() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotPositiveDefinite { .. })));
        let r = riemannian_log(&SpdMatrix::identity(2), &SpdMatrix::identity(3));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        let rect = DMatrix::zeros(2, 3);
        assert!(matches!(SymMatrix::new(rect), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn construction_symmetrizes() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let a = SpdMatrix::new(m).unwrap();
        assert_eq!(a.matrix()[(0, 1)], 0.5);
        assert_eq!(a.matrix()[(1, 0)], 0.5);
    }
}
