//! Intrinsic statistics: Fréchet means, covariance operators of stacked
//! tangent vectors, and the Mahalanobis distance of a stacked realization.
//!
//! Tangent vectors are compared with the plain Frobenius inner product. The
//! Mahalanobis distance does not depend on which tangent space it is
//! evaluated in, so the weighted inner product never has to be formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fidelity::FidelityStructure;
use crate::spd::{check_dims, intrinsic_distance, riemannian_exp, riemannian_log, SpdMatrix, SymMatrix};
use crate::tangent::{sym_to_flat, tri_dim, TangentOperator};

pub const FRECHET_TOL: f64 = 1e-10;
pub const FRECHET_MAX_ITER: usize = 200;
pub const DEFAULT_PILOT_COUNT: usize = 1000;

/// Karcher fixed-point iteration `Σ ← exp_Σ(mean_p log_Σ S_p)`, started at the
/// first sample. Stops once `‖mean_p log_Σ S_p‖_F ≤ tol·‖Σ‖_F`.
pub fn frechet_mean(samples: &[SpdMatrix], tol: f64, max_iter: usize) -> Result<SpdMatrix> {
    let first = samples.first().ok_or(Error::InsufficientSamples { required: 1, found: 0 })?;
    let d = first.dim();
    for s in samples {
        check_dims(d, s.dim())?;
    }
    let mut mean = first.clone();
    let scale = 1.0 / samples.len() as f64;
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let mut step = DMatrix::zeros(d, d);
        for s in samples {
            step += riemannian_log(&mean, s)?.matrix();
        }
        step *= scale;
        residual = step.norm();
        if residual <= tol * mean.matrix().norm() {
            return Ok(mean);
        }
        mean = riemannian_exp(&mean, &SymMatrix::new(step)?)?;
    }
    Err(Error::NotConverged { iterations: max_iter, residual })
}

/// Mean squared intrinsic distance to `mean`.
pub fn riemannian_variance(samples: &[SpdMatrix], mean: &SpdMatrix) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { required: 1, found: 0 });
    }
    let mut acc = 0.0;
    for s in samples {
        acc += intrinsic_distance(mean, s)?.powi(2);
    }
    Ok(acc / samples.len() as f64)
}

/// Independent realizations of a stacked random SPD matrix.
#[derive(Clone, Debug)]
pub struct PilotEnsemble {
    structure: FidelityStructure,
    dim: usize,
    draws: Vec<Vec<SpdMatrix>>,
}

impl PilotEnsemble {
    pub fn new(structure: FidelityStructure, draws: Vec<Vec<SpdMatrix>>) -> Result<Self> {
        let dim = draws
            .first()
            .and_then(|d| d.first())
            .map(SpdMatrix::dim)
            .ok_or(Error::InsufficientSamples { required: 1, found: 0 })?;
        for draw in &draws {
            check_dims(structure.slot_count(), draw.len())?;
            for s in draw {
                check_dims(dim, s.dim())?;
            }
        }
        Ok(PilotEnsemble { structure, dim, draws })
    }

    pub fn structure(&self) -> &FidelityStructure {
        &self.structure
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draws(&self) -> &[Vec<SpdMatrix>] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// All pilot matrices in slots carrying fidelity `f`, across draws.
    pub fn pooled(&self, f: usize) -> Vec<SpdMatrix> {
        let slots: Vec<usize> =
            (0..self.structure.slot_count()).filter(|&n| self.structure.slot_fidelity()[n] == f).collect();
        self.draws.iter().flat_map(|d| slots.iter().map(move |&n| d[n].clone())).collect()
    }
}

/// Per-fidelity Fréchet means of the pooled pilot slots.
pub fn pilot_means(pilot: &PilotEnsemble) -> Result<Vec<SpdMatrix>> {
    (0..pilot.structure.num_fidelities())
        .map(|f| {
            let pooled = pilot.pooled(f);
            if pooled.is_empty() {
                return Err(Error::InvalidStructure(format!("fidelity {f} has no slot")));
            }
            frechet_mean(&pooled, FRECHET_TOL, FRECHET_MAX_ITER)
        })
        .collect()
}

/// Expand per-fidelity means to one mean per slot.
pub fn slot_means(structure: &FidelityStructure, means: &[SpdMatrix]) -> Result<Vec<SpdMatrix>> {
    check_dims(structure.num_fidelities(), means.len())?;
    Ok(structure.slot_fidelity().iter().map(|&f| means[f].clone()).collect())
}

/// Flat encoding of `(log_{Σ_n} S_n)_n`.
pub fn stacked_log(data: &[SpdMatrix], means: &[SpdMatrix]) -> Result<DVector<f64>> {
    check_dims(data.len(), means.len())?;
    let d = data.first().map(SpdMatrix::dim).ok_or_else(|| Error::Invalid("empty data stack".into()))?;
    let q = tri_dim(d);
    let mut v = DVector::zeros(q * data.len());
    for (n, (s, m)) in data.iter().zip(means).enumerate() {
        check_dims(d, s.dim())?;
        v.rows_mut(n * q, q).copy_from(&sym_to_flat(&riemannian_log(m, s)?));
    }
    Ok(v)
}

/// `(1/P) Σ_p v_p v_pᵀ` for already centered tangent vectors.
pub fn empirical_covariance(vectors: &[DVector<f64>], dim: usize, count: usize) -> Result<TangentOperator> {
    let n = tri_dim(dim) * count;
    if vectors.is_empty() {
        return Err(Error::InsufficientSamples { required: 1, found: 0 });
    }
    let mut acc = DMatrix::zeros(n, n);
    for v in vectors {
        check_dims(n, v.len())?;
        acc.ger(1.0, v, v, 1.0);
    }
    acc /= vectors.len() as f64;
    TangentOperator::new(dim, count, acc)
}

/// Covariance operator of the pilot tangent vectors at the per-fidelity
/// `means`, without enforcing independence between groups.
pub fn raw_covariance_operator(pilot: &PilotEnsemble, means: &[SpdMatrix]) -> Result<TangentOperator> {
    let per_slot = slot_means(&pilot.structure, means)?;
    for m in means {
        check_dims(pilot.dim, m.dim())?;
    }
    let vectors = pilot.draws.iter().map(|draw| stacked_log(draw, &per_slot)).collect::<Result<Vec<_>>>()?;
    empirical_covariance(&vectors, pilot.dim, pilot.structure.slot_count())?.with_structure(pilot.structure.clone())
}

/// Covariance operator estimate with cross-group blocks set to zero.
pub fn estimate_covariance_operator(pilot: &PilotEnsemble, means: &[SpdMatrix]) -> Result<TangentOperator> {
    Ok(raw_covariance_operator(pilot, means)?.zero_cross_group_blocks())
}

/// `vᵀ Γ⁻¹ v` with `v` the stacked flat `log_{Σ_n} S_n`.
pub fn mahalanobis_sq(data: &[SpdMatrix], means: &[SpdMatrix], gamma_inv: &TangentOperator) -> Result<f64> {
    let v = stacked_log(data, means)?;
    gamma_inv.quadratic_form(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> SpdMatrix {
        SpdMatrix::from_diagonal(v).unwrap()
    }

    #[test]
    fn mean_of_single_sample() {
        let a = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let m = frechet_mean(std::slice::from_ref(&a), 1e-12, 10).unwrap();
        assert!((m.matrix() - a.matrix()).norm() < 1e-15);
    }

    #[test]
    fn mean_of_inverse_pair_is_identity() {
        let m = frechet_mean(&[diag(&[4.0, 9.0]), diag(&[0.25, 1.0 / 9.0])], 1e-12, 200).unwrap();
        assert!((m.matrix() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn commuting_mean_is_geometric() {
        let samples = [diag(&[1.0, 2.0, 3.0]), diag(&[4.0, 0.5, 3.0]), diag(&[2.0, 8.0, 0.1])];
        let m = frechet_mean(&samples, 1e-12, 200).unwrap();
        for i in 0..3 {
            let g = samples.iter().map(|s| s.matrix()[(i, i)].ln()).sum::<f64>() / 3.0;
            assert!((m.matrix()[(i, i)] - g.exp()).abs() < 1e-10 * g.exp());
        }
    }

    #[test]
    fn mean_reports_non_convergence() {
        let samples = [diag(&[1.0, 50.0]), diag(&[30.0, 1.0])];
        let r = frechet_mean(&samples, 1e-14, 0);
        assert!(matches!(r, Err(Error::NotConverged { .. })));
    }

    #[test]
    fn pilot_at_means_gives_zero_operator() {
        let m = diag(&[1.0, 2.0]);
        let draws = vec![vec![m.clone(), m.clone(), m.clone()]; 5];
        let pilot = PilotEnsemble::new(FidelityStructure::running_example(), draws).unwrap();
        let g = estimate_covariance_operator(&pilot, &[m.clone(), m]).unwrap();
        assert!(g.matrix().norm() < 1e-14);
    }

    #[test]
    fn scalar_operator_is_log_variance() {
        let vals = [0.5, 1.3, 2.0, 0.9];
        let sigma = 1.1;
        let draws = vals.iter().map(|&v| vec![diag(&[v])]).collect();
        let pilot = PilotEnsemble::new(FidelityStructure::single(), draws).unwrap();
        let g = estimate_covariance_operator(&pilot, &[diag(&[sigma])]).unwrap();
        let expected = vals.iter().map(|v: &f64| (sigma * (v / sigma).ln()).powi(2)).sum::<f64>() / 4.0;
        assert!((g.matrix()[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn mahalanobis_zero_at_data_and_frobenius_with_identity() {
        let a = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let s = diag(&[1.0, 3.0]);
        let i = TangentOperator::identity(2, 1);
        assert!(mahalanobis_sq(std::slice::from_ref(&s), std::slice::from_ref(&s), &i).unwrap() < 1e-28);
        let m = mahalanobis_sq(std::slice::from_ref(&s), std::slice::from_ref(&a), &i).unwrap();
        let l = riemannian_log(&a, &s).unwrap();
        assert!((m - l.frobenius_norm().powi(2)).abs() < 1e-13);
    }
}
