use std::path::PathBuf;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (last jitter tried: {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite function value at evaluation point {index}")]
    NonFiniteFunctionValue { index: usize },
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("noise variance must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGradient { group: String },
    #[error("non-finite objective at step {step}; offending parameter group: `{group}`")]
    NonFiniteObjective { step: usize, group: String },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("column {column} has zero variance")]
    ZeroVariance { column: String },
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("requested rank {rank} exceeds min(rows, cols) = {max}")]
    RankTooLarge { rank: usize, max: usize },
    #[error("series of length {len} is too short for window {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            InvalidSpec(_) | Config(_) => ErrorKind::Config,
            MissingFile(_) | SchemaMismatch(_) | SizeMismatch(_) | ZeroVariance { .. } | Io(_)
            | Json(_) | EmptyTestSet | SeriesTooShort { .. } => ErrorKind::Data,
            NotPositiveDefinite { .. }
            | NotSymmetric { .. }
            | DimensionMismatch(_)
            | NonFiniteFunctionValue { .. }
            | NonPositiveVariance(_)
            | NonPositiveNoise(_)
            | NonFiniteGradient { .. }
            | NonFiniteObjective { .. }
            | RankTooLarge { .. } => ErrorKind::Numerical,
        }
    }
}

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
