use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not square: {rows} rows, row {row} has {cols} entries")]
    NotSquare { rows: usize, row: usize, cols: usize },

    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("matrix is not positive (semi)definite: pivot {pivot} = {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension must be at least {min}, got {dim}")]
    DimensionTooSmall { dim: usize, min: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("probability {0} is outside (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("alpha {0} is outside (0, 0.5]")]
    AlphaOutOfRange(f64),

    #[error("beta {0} is outside (0, 0.5)")]
    BetaOutOfRange(f64),

    #[error("Monte Carlo repetitions {0} below the minimum of 1000")]
    TooFewRepetitions(usize),

    #[error("difference of EDTR {i} and EDTR {j} is degenerate (scale {scale:e})")]
    DegeneratePair { i: usize, j: usize, scale: f64 },

    #[error("invalid effect configuration: {0}")]
    InvalidEffects(String),

    #[error("no EDTR is at least delta_min away from the best; nothing to exclude")]
    EmptyExclusionSet,

    #[error("effect size for EDTR {0} is zero inside the exclusion set")]
    ZeroEffect(usize),

    #[error("target power not reached for any n <= {0}")]
    NotReachedWithin(u64),

    #[error("sample size verification failed: power {power} below target {target} after retry")]
    VerificationFailed { power: f64, target: f64 },

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("estimating-equation Jacobian is singular")]
    SingularGamma,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy { kind: &'static str, name: String, available: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
