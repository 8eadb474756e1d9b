//! Gradient descent with Armijo backtracking.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Choice of the first trial step of each line search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Always start from `initial_step`.
    Fixed,
    /// Start from the Barzilai–Borwein step `sᵀs / sᵀy` of the previous
    /// iteration (falls back to `initial_step`).
    BarzilaiBorwein,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentSettings {
    /// Stop when `‖∇f‖ ≤ tol·(1 + |f|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
    pub step_rule: StepRule,
}

impl Default for DescentSettings {
    fn default() -> Self {
        DescentSettings {
            tol: 1e-8,
            max_iter: 2000,
            armijo_c: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
            max_backtracks: 60,
            step_rule: StepRule::BarzilaiBorwein,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DescentResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `f` given `eval(x) = (f(x), ∇f(x))`.
///
/// A trial step is accepted on Armijo sufficient decrease. Once the predicted
/// decrease falls below the rounding level of `f`, a step is also accepted if
/// `f` does not rise beyond rounding and either the gradient norm shrinks or
/// the step is an unshrunk Barzilai–Borwein step (which is nonmonotone by
/// design). A trial point where `eval` fails is treated as infeasible and
/// the step is shrunk.
pub fn gradient_descent<F>(x0: DVector<f64>, settings: &DescentSettings, mut eval: F) -> Result<DescentResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let mut x = x0;
    let (mut f, mut g) = eval(&x)?;
    let mut gnorm = g.norm();
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut iterations = 0;

    while iterations < settings.max_iter {
        if gnorm <= settings.tol * (1.0 + f.abs()) {
            return Ok(DescentResult { x, value: f, gradient_norm: gnorm, iterations, converged: true });
        }
        let (mut step, mut spectral) = match (settings.step_rule, prev.as_ref()) {
            (StepRule::BarzilaiBorwein, Some((px, pg))) => {
                let s = &x - px;
                let sy = s.dot(&(&g - pg));
                if sy > 0.0 {
                    ((s.norm_squared() / sy).clamp(1e-12, 1e12), true)
                } else {
                    (settings.initial_step, false)
                }
            }
            _ => (settings.initial_step, false),
        };

        let noise = 8.0 * f64::EPSILON * (1.0 + f.abs());
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            let trial = &x - &g * step;
            if let Ok((ft, gt)) = eval(&trial) {
                let predicted = settings.armijo_c * step * gnorm * gnorm;
                let armijo = ft.is_finite() && ft <= f - predicted;
                let flat = predicted < noise && ft <= f + noise && (spectral || gt.norm() < gnorm);
                if armijo || flat {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= settings.shrink;
            spectral = false;
        }
        let Some((xn, fnew, gn)) = accepted else {
            return Ok(DescentResult { x, value: f, gradient_norm: gnorm, iterations, converged: false });
        };
        prev = Some((std::mem::replace(&mut x, xn), std::mem::replace(&mut g, gn)));
        f = fnew;
        gnorm = g.norm();
        iterations += 1;
    }
    let converged = gnorm <= settings.tol * (1.0 + f.abs());
    Ok(DescentResult { x, value: f, gradient_norm: gnorm, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn quadratic(h: DMatrix<f64>, b: DVector<f64>) -> impl FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)> {
        move |x| {
            let hx = &h * x;
            Ok((0.5 * x.dot(&hx) - b.dot(x), hx - &b))
        }
    }

    #[test]
    fn solves_ill_conditioned_quadratic() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 10.0, 300.0]));
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        for rule in [StepRule::Fixed, StepRule::BarzilaiBorwein] {
            let s = DescentSettings { step_rule: rule, max_iter: 20000, ..Default::default() };
            let r = gradient_descent(DVector::zeros(3), &s, quadratic(h.clone(), b.clone())).unwrap();
            assert!(r.converged, "{rule:?}");
            let exact = DVector::from_vec(vec![1.0, -0.2, 0.01]);
            assert!((r.x - exact).norm() < 1e-7);
        }
    }

    #[test]
    fn reports_iteration_limit() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e4]));
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let s = DescentSettings { step_rule: StepRule::Fixed, max_iter: 3, ..Default::default() };
        let r = gradient_descent(DVector::zeros(2), &s, quadratic(h, b)).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }
}
