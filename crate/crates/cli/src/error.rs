use serde::Serialize;
use thiserror::Error;

/// Failures surfaced by the commands. Input problems map to exit code 2,
/// solver and output failures to exit code 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) | CliError::Io { .. } => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Solver(_) => "solver",
            CliError::Io { .. } => "io",
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// Machine-readable form written to stderr and `error.json`.
    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl From<uav_ofdma::scenario::ScenarioError> for CliError {
    fn from(e: uav_ofdma::scenario::ScenarioError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<uav_ofdma::bcd::BcdError> for CliError {
    fn from(e: uav_ofdma::bcd::BcdError) -> Self {
        match e {
            uav_ofdma::bcd::BcdError::Scenario(e) => e.into(),
            uav_ofdma::bcd::BcdError::Config(m) => CliError::Validation(m),
            uav_ofdma::bcd::BcdError::PeriodTooShort { .. } => CliError::Validation(e.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<uav_ofdma::allocation::AllocationError> for CliError {
    fn from(e: uav_ofdma::allocation::AllocationError) -> Self {
        CliError::Solver(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
