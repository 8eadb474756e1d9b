//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use mfcov::estimators::log_spaced;
use mfcov::models::BudgetAllocation;
use serde::{Deserialize, Serialize};

use crate::error::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SimpleGaussian,
    MetricLearning,
    PropertySuite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Sample covariance of high-fidelity samples only.
    Hf,
    /// Sample covariance of low-fidelity samples only.
    Lf,
    Emf,
    Lemf,
    Mrmf,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] =
        [EstimatorKind::Hf, EstimatorKind::Lf, EstimatorKind::Emf, EstimatorKind::Lemf, EstimatorKind::Mrmf];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Hf => "hf",
            EstimatorKind::Lf => "lf",
            EstimatorKind::Emf => "emf",
            EstimatorKind::Lemf => "lemf",
            EstimatorKind::Mrmf => "mrmf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

/// Coordinates in which MRMF problems are solved. The estimate does not
/// depend on the choice in exact arithmetic; the optimizer's path and its
/// rounding behaviour do.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Whitening {
    None,
    /// `Y_n = S_n^{1/2}`: every data slot becomes the identity.
    Data,
    /// Free fidelities by the square root of their pilot mean, pinned ones by
    /// the square root of the pinned value.
    #[default]
    Reference,
}

/// How the metric-learning experiment picks the MRMF weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaSearch {
    /// Per class, by the Mahalanobis target of the tuning phase.
    #[default]
    Mahalanobis,
    /// One weight for both classes: the grid point with the smallest median
    /// squared Frobenius error of the learned metric against the reference.
    Direct,
}

/// Settings used only by the metric-learning experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    /// Distance between the two class means.
    pub separation: f64,
    /// Geodesic parameter of the learned metric.
    pub t: f64,
    /// Variance of the isotropic low-fidelity corruption.
    pub low_noise_var: f64,
    /// High-fidelity draws used to compute the reference metric.
    pub reference_samples: usize,
    /// Points at which the mean relative error of each metric is measured.
    pub test_points: usize,
    pub lambda_search: LambdaSearch,
    /// Trials per grid point of the direct search.
    pub search_trials: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            separation: 2.0,
            t: 0.1,
            low_noise_var: 0.3,
            reference_samples: 12_000,
            test_points: 5000,
            lambda_search: LambdaSearch::Mahalanobis,
            search_trials: 24,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: usize,
    pub dim: usize,
    /// Variance of the additive low-fidelity noise.
    pub noise_var: f64,
    pub c_hi: f64,
    pub c_lo: f64,
    pub budgets: Vec<f64>,
    /// Fraction of each budget spent on coupled pairs. Ignored when
    /// `allocations` is given.
    pub rho: f64,
    /// Explicit `[M1, M2]` per budget.
    pub allocations: Option<Vec<[usize; 2]>>,
    pub pilot: usize,
    pub lambda_grid: Vec<f64>,
    pub tuning_trials: usize,
    pub estimators: Vec<EstimatorKind>,
    pub whitening: Whitening,
    pub output_dir: PathBuf,
    /// Record wall-clock milliseconds per estimate. Off by default so that
    /// repeated runs produce identical files.
    pub record_wall_time: bool,
    pub metric: MetricSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::SimpleGaussian,
            seed: 1,
            trials: 2000,
            dim: 4,
            noise_var: 0.7,
            c_hi: 1.0,
            c_lo: 0.01,
            budgets: vec![6.0, 56.0, 106.0, 156.0, 206.0],
            rho: 0.9,
            allocations: None,
            pilot: 1000,
            lambda_grid: log_spaced(1e-3, 1e2, 18),
            tuning_trials: 32,
            estimators: EstimatorKind::ALL.to_vec(),
            whitening: Whitening::Reference,
            output_dir: PathBuf::from("mfcov-out"),
            record_wall_time: false,
            metric: MetricSettings::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        if self.kind == ExperimentKind::PropertySuite {
            return Ok(());
        }
        if self.dim == 0 {
            return Err(invalid("dim must be at least 1"));
        }
        if self.trials == 0 || self.pilot < 2 || self.tuning_trials == 0 {
            return Err(invalid("trials and tuning_trials must be positive and pilot at least 2"));
        }
        positive("noise_var", self.noise_var)?;
        positive("c_hi", self.c_hi)?;
        positive("c_lo", self.c_lo)?;
        if self.budgets.is_empty() {
            return Err(invalid("budgets must not be empty"));
        }
        for &b in &self.budgets {
            positive("budget", b)?;
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("budgets must be strictly ascending"));
        }
        if self.budgets.len() >= 1 << 12 {
            return Err(invalid("too many budgets"));
        }
        match &self.allocations {
            Some(a) if a.len() != self.budgets.len() => {
                return Err(invalid(format!("{} allocations given for {} budgets", a.len(), self.budgets.len())))
            }
            Some(_) => {}
            None if !(self.rho > 0.0 && self.rho <= 1.0) => {
                return Err(invalid(format!("rho must lie in (0, 1], got {}", self.rho)))
            }
            None => {}
        }
        if self.lambda_grid.is_empty() {
            return Err(invalid("lambda_grid must not be empty"));
        }
        for &l in &self.lambda_grid {
            positive("lambda", l)?;
        }
        if self.estimators.is_empty() {
            return Err(invalid("estimators must not be empty"));
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return Err(invalid("estimators must not repeat"));
        }
        for i in 0..self.budgets.len() {
            self.allocation(i)?;
        }
        if self.kind == ExperimentKind::MetricLearning {
            let m = &self.metric;
            positive("metric.separation", m.separation)?;
            positive("metric.low_noise_var", m.low_noise_var)?;
            if !(0.0..=1.0).contains(&m.t) {
                return Err(invalid(format!("metric.t must lie in [0, 1], got {}", m.t)));
            }
            if m.reference_samples < 4 * self.dim || m.test_points == 0 || m.search_trials == 0 {
                return Err(invalid("metric sample counts are too small"));
            }
        }
        Ok(())
    }

    /// Sample allocation for budget `i`.
    pub fn allocation(&self, i: usize) -> Result<BudgetAllocation, BenchError> {
        let b = self.budgets[i];
        let alloc = match &self.allocations {
            Some(a) => BudgetAllocation::new(self.c_hi, self.c_lo, b, a[i][0], a[i][1]),
            None => BudgetAllocation::from_fraction(self.c_hi, self.c_lo, b, self.rho),
        };
        alloc.map_err(|e| invalid(format!("budget {b}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trip_through_toml() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("budgets = [56.0, 6.0]").is_err());
        assert!(ExperimentConfig::from_toml("rho = 0.0").is_err());
        assert!(ExperimentConfig::from_toml("budgets = [1.0]").is_err());
        assert!(ExperimentConfig::from_toml("estimators = [\"hf\", \"hf\"]").is_err());
        assert!(ExperimentConfig::from_toml("budgets = [6.0]\nallocations = [[5, 60], [5, 60]]").is_err());
    }

    #[test]
    fn explicit_allocation_is_checked_against_budget() {
        assert!(ExperimentConfig::from_toml("budgets = [6.0]\nallocations = [[5, 60]]").is_ok());
        assert!(ExperimentConfig::from_toml("budgets = [6.0]\nallocations = [[6, 60]]").is_err());
    }
}
