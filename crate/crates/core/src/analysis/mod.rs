//! Two-node oracle, error metrics, PMU placement and Monte-Carlo experiments.

mod experiment;
mod metrics;
mod placement;
mod twonode;

use nalgebra::DMatrix;

use crate::estimator::EstimatorError;
use crate::linalg::symmetrize;
use crate::linearize::{LinearModel, LinearizeError};
use crate::measure::MeasureError;
use crate::powerflow::PowerFlowError;

pub use experiment::{
    run_experiment, run_experiment_with_threads, Algorithm, ArmseRecord, ExperimentResult,
    ExperimentSummary, Quantity, Scenario, SlopeTest, SummaryEntry, NOISE_FLOOR,
};
pub use metrics::{empirical_armse, theoretical_armse, tve, TveReport, TveWindow};
pub use placement::{greedy_placement, placement_score};
pub use twonode::{
    theta_beta_correlation, two_node_limits, two_node_posterior, TwoNodeLimits, TwoNodeParams,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid experiment setup: {0}")]
    Config(String),
    #[error("{resampled} of {runs} runs needed a new demand draw (limit 1%)")]
    TooManyResamples { resampled: usize, runs: usize },
    #[error("writing results: {0}")]
    Output(String),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// `Σ^u = S_u Σ^{pq} S_uᵀ` for a demand covariance.
pub fn voltage_covariance(model: &LinearModel, demand: &DMatrix<f64>) -> DMatrix<f64> {
    let s = model.sensitivity();
    let mut out = s * demand * s.transpose();
    symmetrize(&mut out);
    out
}
