//! Linear control variates in the Euclidean (EMF) and log-Euclidean (LEMF)
//! geometries.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spd::{check_dims, SpdMatrix, SymMatrix};
use crate::tangent::{flat_to_sym, regularized_inverse, sym_to_flat, TangentOperator};

/// Cross moments of a high/low pair in flat coordinates:
/// `cross = E[δ_hi δ_loᵀ]` and `low = E[δ_lo δ_loᵀ]`.
#[derive(Clone, Debug)]
pub struct CrossMoments {
    pub cross: TangentOperator,
    pub low: TangentOperator,
}

impl CrossMoments {
    /// `tr(cross) / tr(low)`.
    pub fn scalar_gain(&self) -> Result<Gain> {
        Gain::scalar_from_traces(self.cross.trace(), self.low.trace())
    }

    /// `cross · (low + eps-shift)⁻¹`.
    pub fn operator_gain(&self, eps: f64) -> Result<Gain> {
        let inv = regularized_inverse(&self.low, eps)?;
        Ok(Gain::Operator(self.cross.compose(&inv)?))
    }
}

/// How the low-fidelity deviation is mapped onto the high-fidelity correction.
#[derive(Clone, Debug)]
pub enum Gain {
    Scalar(f64),
    /// Acts on flat coordinates of one symmetric matrix.
    Operator(TangentOperator),
}

impl Gain {
    pub fn scalar_from_traces(tr_cross: f64, tr_low: f64) -> Result<Gain> {
        if tr_low == 0.0 {
            return Err(Error::ZeroDenominator);
        }
        Ok(Gain::Scalar(tr_cross / tr_low))
    }

    fn apply(&self, delta: &SymMatrix) -> Result<SymMatrix> {
        match self {
            Gain::Scalar(a) => Ok(delta.scale(*a)),
            Gain::Operator(op) => {
                check_dims(delta.dim(), op.dim())?;
                if op.row_slots() != 1 || op.col_slots() != 1 {
                    return Err(Error::Invalid("operator gain must act on a single slot".into()));
                }
                flat_to_sym(&op.apply_flat(&sym_to_flat(delta))?, delta.dim())
            }
        }
    }
}

fn moments(hi: &[DVector<f64>], lo: &[DVector<f64>], dim: usize) -> Result<CrossMoments> {
    if hi.len() != lo.len() {
        return Err(Error::DimensionMismatch { expected: hi.len(), found: lo.len() });
    }
    if hi.len() < 2 {
        return Err(Error::InsufficientSamples { required: 2, found: hi.len() });
    }
    let n = hi[0].len();
    let p = hi.len() as f64;
    let mean_hi = hi.iter().fold(DVector::zeros(n), |a, x| a + x) / p;
    let mean_lo = lo.iter().fold(DVector::zeros(n), |a, x| a + x) / p;
    let mut cross = DMatrix::zeros(n, n);
    let mut low = DMatrix::zeros(n, n);
    for (h, l) in hi.iter().zip(lo) {
        let dh = h - &mean_hi;
        let dl = l - &mean_lo;
        cross.ger(1.0, &dh, &dl, 1.0);
        low.ger(1.0, &dl, &dl, 1.0);
    }
    let scale = 1.0 / (p - 1.0);
    Ok(CrossMoments {
        cross: TangentOperator::new(dim, 1, cross * scale)?,
        low: TangentOperator::new(dim, 1, low * scale)?,
    })
}

/// Moments of `(S_hi, S_lo)` about their sample means.
pub fn euclidean_moments(hi: &[SymMatrix], lo: &[SymMatrix]) -> Result<CrossMoments> {
    let dim = hi.first().map(SymMatrix::dim).ok_or(Error::InsufficientSamples { required: 2, found: 0 })?;
    let fh: Vec<_> = hi.iter().map(sym_to_flat).collect();
    let fl: Vec<_> = lo.iter().map(sym_to_flat).collect();
    moments(&fh, &fl, dim)
}

/// Moments of `(log S_hi, log S_lo)` about their sample means.
pub fn log_euclidean_moments(hi: &[SpdMatrix], lo: &[SpdMatrix]) -> Result<CrossMoments> {
    let dim = hi.first().map(SpdMatrix::dim).ok_or(Error::InsufficientSamples { required: 2, found: 0 })?;
    let fh: Vec<_> = hi.iter().map(|s| sym_to_flat(&s.log())).collect();
    let fl: Vec<_> = lo.iter().map(|s| sym_to_flat(&s.log())).collect();
    moments(&fh, &fl, dim)
}

/// A Euclidean control-variate estimate; may be indefinite.
#[derive(Clone, Debug)]
pub struct EmfEstimate {
    pub matrix: SymMatrix,
    pub min_eigenvalue: f64,
}

impl EmfEstimate {
    pub fn is_definite(&self) -> bool {
        self.min_eigenvalue > 0.0
    }
}

/// `S_hi + gain(S̄_lo − S_lo)`.
pub fn emf(s_hi: &SymMatrix, s_lo: &SymMatrix, s_lo_bar: &SymMatrix, gain: &Gain) -> Result<EmfEstimate> {
    check_dims(s_hi.dim(), s_lo.dim())?;
    check_dims(s_hi.dim(), s_lo_bar.dim())?;
    let matrix = s_hi.add(&gain.apply(&s_lo_bar.sub(s_lo))?);
    let min_eigenvalue = matrix.min_eigenvalue();
    Ok(EmfEstimate { matrix, min_eigenvalue })
}

/// `exp(log S_hi + gain(log S̄_lo − log S_lo))`; always SPD.
pub fn lemf(s_hi: &SpdMatrix, s_lo: &SpdMatrix, s_lo_bar: &SpdMatrix, gain: &Gain) -> Result<SpdMatrix> {
    check_dims(s_hi.dim(), s_lo.dim())?;
    check_dims(s_hi.dim(), s_lo_bar.dim())?;
    let log = s_hi.log().add(&gain.apply(&s_lo_bar.log().sub(&s_lo.log()))?);
    log.exp()
}
