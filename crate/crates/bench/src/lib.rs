//! Seeded experiment harness for the multifidelity covariance estimators.

pub mod config;
pub mod error;
pub mod metric;
pub mod pipeline;
pub mod report;
pub mod run;
pub mod selftest;
pub mod simple;

pub use config::{EstimatorKind, ExperimentConfig, ExperimentKind};
pub use error::BenchError;
