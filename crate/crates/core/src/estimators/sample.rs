use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spd::{check_dims, pd_threshold, SpdMatrix, SymMatrix};

/// A sample covariance matrix together with its definiteness.
#[derive(Clone, Debug)]
pub struct SampleCovariance {
    matrix: SymMatrix,
    spd: Option<SpdMatrix>,
    min_eigenvalue: f64,
    count: usize,
}

impl SampleCovariance {
    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn is_spd(&self) -> bool {
        self.spd.is_some()
    }

    pub fn spd(&self) -> Option<&SpdMatrix> {
        self.spd.as_ref()
    }

    pub fn to_spd(&self) -> Result<SpdMatrix> {
        self.spd.clone().ok_or(Error::NotPositiveDefinite { min_eigenvalue: self.min_eigenvalue })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Number of samples it was computed from.
    pub fn count(&self) -> usize {
        self.count
    }
}

/// Mean-centered sample covariance with the `1/(M−1)` normalization.
pub fn scm(samples: &[DVector<f64>]) -> Result<SampleCovariance> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples { required: 2, found: samples.len() });
    }
    let d = samples[0].len();
    if d == 0 {
        return Err(Error::Invalid("samples have dimension zero".into()));
    }
    let mut mean = DVector::zeros(d);
    for x in samples {
        check_dims(d, x.len())?;
        mean += x;
    }
    mean /= samples.len() as f64;
    let mut acc = DMatrix::zeros(d, d);
    for x in samples {
        let c = x - &mean;
        acc.ger(1.0, &c, &c, 1.0);
    }
    acc /= (samples.len() - 1) as f64;
    let matrix = SymMatrix::new(acc)?;
    let values = matrix.eigenvalues();
    let (lo, hi) = (values.min(), values.max());
    let spd = if lo > pd_threshold(hi) { SpdMatrix::new(matrix.matrix().clone()).ok() } else { None };
    Ok(SampleCovariance { matrix, spd, min_eigenvalue: lo, count: samples.len() })
}
