use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("asymmetric coefficient sample at {location:?}: |a12 - a21| = {defect:e}")]
    AsymmetricCoefficient { location: [f64; 2], defect: f64 },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e}, tol {tol:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),

    #[error("family `{family}` expects {expected} parameters, got {got}")]
    Arity {
        family: String,
        expected: usize,
        got: usize,
    },

    #[error("hypothesis {hypothesis} violated: {detail}")]
    Hypothesis {
        hypothesis: &'static str,
        detail: String,
    },

    #[error("cell problem: {0}")]
    Cell(String),

    #[error("time-periodic cell problem not periodic after {periods} periods (defect {defect:e}, tol {tol:e})")]
    PeriodicityNotReached {
        periods: usize,
        defect: f64,
        tol: f64,
    },

    #[error("theta {theta:e} exceeds table maximum {theta_max:e}")]
    ThetaOverflow { theta: f64, theta_max: f64 },

    #[error("Newton diverged at step {step} (t = {time}): residual {residual:e}")]
    NewtonDiverged {
        step: usize,
        time: f64,
        residual: f64,
    },

    #[error("diagnostics: {0}")]
    Diagnostics(String),

    #[error("malformed data in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
