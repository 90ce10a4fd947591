use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cutoff must satisfy n_max >= 1, got {0}")]
    InvalidCutoff(usize),
    #[error("cutoff mismatch: {left} vs {right}")]
    CutoffMismatch { left: usize, right: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix trace {0} is not 1")]
    NotUnitTrace(f64),
    #[error("matrix is not positive semidefinite (minimum eigenvalue {0:.3e})")]
    NotPositive(f64),
    #[error("truncation inadequate: retained probability {retained:.6} < {required}")]
    TruncationInadequate { retained: f64, required: f64 },
    #[error("truncation overflow: {lost:.3e} of the weight is pushed past n_max")]
    TruncationOverflow { lost: f64 },
    #[error("operation has zero success weight")]
    ZeroWeight,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid does not cover the distribution: {0}")]
    GridCoverage(String),
    #[error("no measurement records")]
    EmptyRecords,
    #[error("reconstruction aborted: {0}")]
    Reconstruction(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing inputs: {0:?}")]
    MissingInputs(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
