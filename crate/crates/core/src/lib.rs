//! Multifidelity covariance estimation on the manifold of symmetric positive
//! definite matrices.
//!
//! The crate is layered bottom-up:
//!
//! - [`spd`]: affine-invariant geometry (log/exp maps, geodesics, distance).
//! - [`tangent`]: flat coordinates for symmetric matrices and dense operators
//!   on stacks of tangent vectors.
//! - [`fidelity`]: which stacked slot carries which fidelity.
//! - [`stats`]: Fréchet means, covariance operators, Mahalanobis distance.
//! - [`estimators`]: sample covariance, Euclidean and log-Euclidean control
//!   variates, and the manifold-regression estimator (MRMF).
//! - [`models`]: coupled Gaussian generators and budget accounting.
//! - [`metric`]: geometric mean metric learning.

pub mod error;
pub mod estimators;
pub mod fidelity;
pub mod metric;
pub mod models;
pub mod optim;
pub mod rng;
pub mod spd;
pub mod stats;
pub mod tangent;

pub use error::{Error, Result};
pub use fidelity::FidelityStructure;
pub use spd::{SpdMatrix, SymMatrix};
pub use tangent::{TangentOperator, TangentStack};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
