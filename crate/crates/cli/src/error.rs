use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{failed} verification check(s) failed")]
    Verification { failed: usize },

    #[error(transparent)]
    Core(#[from] steinflow::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Stable machine-readable kind for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config-error",
            Self::Data(_) => "data-error",
            Self::Verification { .. } => "verification-failed",
            Self::Core(steinflow::Error::InvalidArgument(_)) => "invalid-argument",
            Self::Core(steinflow::Error::NumericalFailure(_)) => "numerical-failure",
            Self::Core(steinflow::Error::NotConverged { .. }) => "not-converged",
            Self::Core(_) => "core-error",
            Self::Io(_) => "io-error",
            Self::Csv(_) => "csv-error",
            Self::Json(_) => "json-error",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
