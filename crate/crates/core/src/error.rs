use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("{stage} did not converge after {iterations} iterations (last gradient norm {grad_norm:.3e})")]
    NonConvergence {
        stage: &'static str,
        iterations: usize,
        grad_norm: f64,
        trace: Vec<f64>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `row` counts data rows from 1 (the header is not a row).
    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("quadrature did not reach tolerance (estimated error {0:.3e})")]
    Quadrature(f64),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::NonConvergence { .. } => "non_convergence",
            Error::InvalidInput(_) => "invalid_input",
            Error::Data { .. } => "data",
            Error::UnknownColumn(_) => "unknown_column",
            Error::Bracketing(_) => "bracketing",
            Error::Quadrature(_) => "quadrature",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
