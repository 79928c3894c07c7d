//! Error type and exit-code policy for the command-line driver.
//!
//! Every failure a command can hit is folded into one of three buckets that
//! map onto process exit codes: bad input (malformed configuration, unknown
//! names, initial data the integrator rejects, unwritable output), a curve
//! leaving its chart before the step budget, and a verification that ran but
//! did not hold. Success exits with code zero.

use distcurve::bgg::BggError;
use distcurve::curves::CurveError;
use distcurve::geometry::{MetricError, ParseError};
use distcurve::integrals::IntegralsError;
use distcurve::tensor::TensorError;
use distcurve::tractor::TractorError;
use thiserror::Error;

/// Exit code for clean runs.
pub const EXIT_OK: i32 = 0;
/// Exit code when a requested verification does not hold.
pub const EXIT_VERIFICATION: i32 = 1;
/// Exit code when the curve leaves its chart before finishing.
pub const EXIT_CHART: i32 = 2;
/// Exit code for configuration, input, and environment problems.
pub const EXIT_BAD_INPUT: i32 = 3;

/// Anything that can stop a command, tagged by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    BadInput(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("curve left the chart after step {step}: {reason}")]
    ChartExit { step: usize, reason: String },
}

impl CliError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadInput(_) => EXIT_BAD_INPUT,
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::ChartExit { .. } => EXIT_CHART,
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> CliError {
        CliError::BadInput(format!("metric: {e}"))
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> CliError {
        CliError::BadInput(format!("expression: {e}"))
    }
}

impl From<CurveError> for CliError {
    fn from(e: CurveError) -> CliError {
        CliError::BadInput(format!("curve: {e}"))
    }
}

impl From<BggError> for CliError {
    fn from(e: BggError) -> CliError {
        CliError::BadInput(format!("field: {e}"))
    }
}

impl From<IntegralsError> for CliError {
    fn from(e: IntegralsError) -> CliError {
        CliError::BadInput(format!("integral: {e}"))
    }
}

impl From<TractorError> for CliError {
    fn from(e: TractorError) -> CliError {
        CliError::BadInput(format!("tractor: {e}"))
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> CliError {
        CliError::BadInput(format!("tensor: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::BadInput(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> CliError {
        CliError::BadInput(format!("report serialisation: {e}"))
    }
}
