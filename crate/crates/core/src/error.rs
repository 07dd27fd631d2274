use thiserror::Error;

/// Errors produced by estimation, simulation and oracle routines.
///
/// The CLI exits with 3 on `Numerical` and with 2 on every other variant.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments (dimension mismatch, out-of-range sizes).
    #[error("input error: {0}")]
    Input(String),
    /// A dataset failed structural validation.
    #[error("validation error: {0}")]
    Validation(String),
    /// A dataset is missing state an operation needs (e.g. fold labels).
    #[error("state error: {0}")]
    State(String),
    /// A linear system could not be solved or a quadrature did not converge.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A nuisance was used in a way its training provenance forbids.
    #[error("contract error: {0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code, used in sweep failure columns.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Validation(_) => "validation",
            Error::State(_) => "state",
            Error::Numerical(_) => "numerical",
            Error::Contract(_) => "contract",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
