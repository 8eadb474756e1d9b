//! Geometric mean metric learning.
//!
//! For two classes with covariances `Γ_0, Γ_1` and means `m_0, m_1`, the
//! similarity matrix is `T = Γ_0 + Γ_1` and the dissimilarity matrix is
//! `D = T + (m_0 − m_1)(m_0 − m_1)ᵀ`. The learned metric is the point at
//! parameter `t` on the geodesic from `T⁻¹` to `D`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spd::{check_dims, geodesic, symmetrize, SpdMatrix, SymMatrix};

#[derive(Clone, Debug)]
pub struct MetricMatrix {
    pub a: SpdMatrix,
    pub t: f64,
    /// Name of the estimator that produced the class covariances.
    pub provenance: String,
}

impl MetricMatrix {
    pub fn new(a: SpdMatrix, t: f64, provenance: impl Into<String>) -> Self {
        MetricMatrix { a, t, provenance: provenance.into() }
    }

    /// `sqrt(yᵀ A y)`.
    pub fn norm(&self, y: &DVector<f64>) -> f64 {
        y.dot(&(self.a.matrix() * y)).max(0.0).sqrt()
    }
}

pub fn similarity_dissimilarity(
    gamma0: &SpdMatrix,
    gamma1: &SpdMatrix,
    m0: &DVector<f64>,
    m1: &DVector<f64>,
) -> Result<(SpdMatrix, SpdMatrix)> {
    let d = gamma0.dim();
    check_dims(d, gamma1.dim())?;
    check_dims(d, m0.len())?;
    check_dims(d, m1.len())?;
    let t = gamma0.matrix() + gamma1.matrix();
    let gap = m0 - m1;
    let dm = &t + &gap * gap.transpose();
    Ok((SpdMatrix::new(t)?, SpdMatrix::new(dm)?))
}

/// `T^{-1/2}(T^{1/2} D T^{1/2})^t T^{-1/2}`.
pub fn gmml_metric(t_mat: &SpdMatrix, d_mat: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    check_dims(t_mat.dim(), d_mat.dim())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange { name: "t", value: t });
    }
    let inner = SpdMatrix::new(t_mat.sqrt_matrix() * d_mat.matrix() * t_mat.sqrt_matrix())?;
    let p = inner.powf(t)?;
    let isq = t_mat.inv_sqrt_matrix();
    SpdMatrix::new(symmetrize(&(isq * p.matrix() * isq)))
}

/// Same metric computed as `geodesic(T⁻¹, D, t)`.
pub fn gmml_geodesic(t_mat: &SpdMatrix, d_mat: &SpdMatrix, t: f64) -> Result<SpdMatrix> {
    geodesic(&t_mat.inverse(), d_mat, t)
}

/// Metric from possibly indefinite class-covariance estimates. Indefinite
/// input is refused rather than repaired.
pub fn metric_from_estimates(
    gamma0: &SymMatrix,
    gamma1: &SymMatrix,
    m0: &DVector<f64>,
    m1: &DVector<f64>,
    t: f64,
    provenance: &str,
) -> Result<MetricMatrix> {
    let g0 = gamma0.to_spd().map_err(|e| indefinite(provenance, 0, e))?;
    let g1 = gamma1.to_spd().map_err(|e| indefinite(provenance, 1, e))?;
    let (tm, dm) = similarity_dissimilarity(&g0, &g1, m0, m1)?;
    Ok(MetricMatrix::new(gmml_metric(&tm, &dm, t)?, t, provenance))
}

fn indefinite(provenance: &str, class: usize, e: Error) -> Error {
    match e {
        Error::NotPositiveDefinite { min_eigenvalue } => Error::Invalid(format!(
            "{provenance} covariance of class {class} is not positive definite (min eigenvalue {min_eigenvalue:e}); \
             no geodesic metric exists"
        )),
        other => other,
    }
}

/// `mean_i |‖y_i‖_Â − ‖y_i‖_A| / ‖y_i‖_A`. Points with `‖y‖_A = 0` are skipped
/// with a warning.
pub fn mean_relative_error(a_hat: &MetricMatrix, a_ref: &MetricMatrix, points: &[DVector<f64>]) -> Result<f64> {
    check_dims(a_ref.a.dim(), a_hat.a.dim())?;
    let mut acc = 0.0;
    let mut used = 0usize;
    for y in points {
        check_dims(a_ref.a.dim(), y.len())?;
        let r = a_ref.norm(y);
        if r == 0.0 {
            log::warn!("skipping test point with zero reference norm");
            continue;
        }
        acc += (a_hat.norm(y) - r).abs() / r;
        used += 1;
    }
    if used == 0 {
        return Err(Error::InsufficientSamples { required: 1, found: 0 });
    }
    Ok(acc / used as f64)
}

/// Squared Frobenius distance between two metrics.
pub fn frobenius_sq(a: &MetricMatrix, b: &MetricMatrix) -> f64 {
    let diff: DMatrix<f64> = a.a.matrix() - b.a.matrix();
    diff.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(v: &[f64]) -> SpdMatrix {
        let d = (v.len() as f64).sqrt() as usize;
        SpdMatrix::new(DMatrix::from_row_slice(d, d, v)).unwrap()
    }

    #[test]
    fn equal_means_give_d_equal_t() {
        let g = spd(&[2.0, 0.3, 0.3, 1.0]);
        let m = DVector::from_vec(vec![1.0, -1.0]);
        let (t, d) = similarity_dissimilarity(&g, &g, &m, &m).unwrap();
        assert_eq!(t.matrix(), d.matrix());
    }

    #[test]
    fn unit_gap() {
        let i = SpdMatrix::identity(2);
        let (_, d) = similarity_dissimilarity(&i, &i, &DVector::from_vec(vec![1.0, 0.0]), &DVector::zeros(2)).unwrap();
        assert_eq!(d.matrix(), &DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn endpoints() {
        let t = spd(&[2.0, 0.3, 0.3, 1.0]);
        let d = spd(&[3.0, -0.5, -0.5, 2.0]);
        let a0 = gmml_metric(&t, &d, 0.0).unwrap();
        assert!((a0.matrix() - t.inverse_matrix()).norm() < 1e-12);
        let a1 = gmml_metric(&t, &d, 1.0).unwrap();
        assert!((a1.matrix() - d.matrix()).norm() < 1e-12);
    }

    #[test]
    fn mre_scaling_and_identity() {
        let a = MetricMatrix::new(spd(&[2.0, 0.3, 0.3, 1.0]), 0.1, "ref");
        let pts: Vec<_> = (0..5).map(|i| DVector::from_vec(vec![i as f64 - 2.0, 1.0])).collect();
        assert_eq!(mean_relative_error(&a, &a, &pts).unwrap(), 0.0);
        let scaled = MetricMatrix::new(SpdMatrix::new(a.a.matrix() * 2.25).unwrap(), 0.1, "x");
        assert!((mean_relative_error(&scaled, &a, &pts).unwrap() - 0.5).abs() < 1e-14);
        assert!(mean_relative_error(&a, &a, &[DVector::zeros(2)]).is_err());
    }

    #[test]
    fn indefinite_estimates_refused() {
        let bad = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        let good = SymMatrix::identity(2);
        let m = DVector::zeros(2);
        let err = metric_from_estimates(&bad, &good, &m, &m, 0.1, "emf").unwrap_err();
        assert!(err.to_string().contains("not positive definite"));
    }
}
