use sase_core::analysis::AnalysisError;
use sase_core::estimator::EstimatorError;
use sase_core::linearize::LinearizeError;
use sase_core::measure::MeasureError;
use sase_core::network::NetworkError;
use sase_core::powerflow::PowerFlowError;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad paths, documents, flags or streams. Exit code 2.
    #[error("{0}")]
    Input(String),
    /// The numerics failed on valid input. Exit code 1.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PowerFlowError> for CliError {
    fn from(e: PowerFlowError) -> Self {
        match e {
            PowerFlowError::Dimension { .. } => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<LinearizeError> for CliError {
    fn from(e: LinearizeError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::SingularNoise | EstimatorError::SingularInnovation { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::PowerFlow(e) => e.into(),
            AnalysisError::Linearize(e) => e.into(),
            AnalysisError::Measure(e) => e.into(),
            AnalysisError::Estimator(e) => e.into(),
            AnalysisError::TooManyResamples { .. } => CliError::Numerical(e.to_string()),
            AnalysisError::Dimension(_) | AnalysisError::Config(_) | AnalysisError::Output(_) => {
                CliError::Input(e.to_string())
            }
        }
    }
}
