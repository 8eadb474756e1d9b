//! Choice of the regularization weight.
//!
//! At the true means and with an exact covariance operator, the Mahalanobis
//! distance of a realization is chi-squared with `d(d+1)/2` degrees of freedom
//! per free fidelity. The weight whose solutions reproduce that average is
//! selected.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::mrmf::{mrmf_solve, MrmfProblem};
use crate::rng::{Purpose, SeedTree, StreamRng};
use crate::tangent::tri_dim;

/// Source of tuning problems.
pub trait ProblemTemplate: Sync {
    fn dim(&self) -> usize;

    /// Number of estimated (not pinned) fidelities per instance.
    fn free_count(&self) -> usize {
        1
    }

    /// A fresh problem instance drawn from `rng` with weight `lambda` on every
    /// penalized fidelity.
    fn instance(&self, lambda: f64, rng: &mut StreamRng) -> Result<MrmfProblem>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaScore {
    pub lambda: f64,
    /// Mean unpenalized Mahalanobis value over converged solves; `None` if
    /// none converged.
    pub mean_mahalanobis: Option<f64>,
    pub converged: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub target: f64,
    pub scores: Vec<LambdaScore>,
}

/// `count` points spaced evenly in log scale over `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
        }
    }
}

/// Pick the score closest to `target`; ties go to the smaller weight.
pub fn select_lambda(scores: Vec<LambdaScore>, target: f64) -> Result<LambdaSelection> {
    if scores.is_empty() {
        return Err(Error::Invalid("empty lambda grid".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for s in &scores {
        let Some(m) = s.mean_mahalanobis else { continue };
        let gap = (m - target).abs();
        best = match best {
            Some((bl, bg)) if gap > bg || (gap == bg && s.lambda >= bl) => Some((bl, bg)),
            _ => Some((s.lambda, gap)),
        };
    }
    let (lambda, _) = best.ok_or_else(|| Error::Invalid("no lambda in the grid produced a converged solve".into()))?;
    Ok(LambdaSelection { lambda, target, scores })
}

/// Solve `trials` problems per grid point and select by the degree-of-freedom
/// heuristic. Trial `t` uses the same random stream for every weight.
pub fn tune_lambda(template: &dyn ProblemTemplate, grid: &[f64], trials: usize, seed: u64) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::Invalid("empty lambda grid".into()));
    }
    if trials == 0 {
        return Err(Error::OutOfRange { name: "trials", value: 0.0 });
    }
    let tree = SeedTree::new(seed);
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let outcomes: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let mut rng = tree.stream(Purpose::Tuning, 0, t as u64);
            let problem = template.instance(grid[i], &mut rng).ok()?;
            let report = mrmf_solve(&problem).ok()?;
            (report.converged && report.mahalanobis_value.is_finite()).then_some(report.mahalanobis_value)
        })
        .collect();
    let scores = grid
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let vals: Vec<f64> = outcomes[i * trials..(i + 1) * trials].iter().flatten().copied().collect();
            let mean_mahalanobis = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            LambdaScore { lambda, mean_mahalanobis, converged: vals.len() }
        })
        .collect();
    select_lambda(scores, (template.free_count() * tri_dim(template.dim())) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(lambda: f64, m: Option<f64>) -> LambdaScore {
        LambdaScore { lambda, mean_mahalanobis: m, converged: m.map_or(0, |_| 1) }
    }

    #[test]
    fn grid_spacing() {
        let g = log_spaced(1e-3, 1e2, 18);
        assert_eq!(g.len(), 18);
        assert!((g[0] - 1e-3).abs() < 1e-18);
        assert!((g[17] - 1e2).abs() < 1e-10);
        let ratio = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - ratio).abs() < 1e-10));
    }

    #[test]
    fn singleton_grid() {
        let s = select_lambda(vec![score(0.5, Some(100.0))], 6.0).unwrap();
        assert_eq!(s.lambda, 0.5);
    }

    #[test]
    fn ties_prefer_smaller_and_divergent_excluded() {
        let s = select_lambda(vec![score(2.0, Some(7.0)), score(1.0, Some(5.0)), score(0.1, None)], 6.0).unwrap();
        assert_eq!(s.lambda, 1.0);
        assert!(select_lambda(vec![score(1.0, None)], 6.0).is_err());
    }
}
