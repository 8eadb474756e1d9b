//! Covariance estimators.

mod control_variate;
mod mrmf;
mod sample;
mod tuning;

pub use control_variate::{emf, euclidean_moments, lemf, log_euclidean_moments, CrossMoments, EmfEstimate, Gain};
pub use mrmf::{
    mrmf_gradient, mrmf_gradient_analytic, mrmf_gradient_fd, mrmf_solve, precondition, precondition_with,
    EstimateReport, GradientMode, MrmfProblem, ObjectiveValue, Preconditioner, SolverSettings,
};
pub use sample::{scm, SampleCovariance};
pub use tuning::{log_spaced, select_lambda, tune_lambda, LambdaScore, LambdaSelection, ProblemTemplate};
