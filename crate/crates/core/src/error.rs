use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel parameter `{name}` must be finite")]
    NonFinite { name: &'static str },
    #[error("kernel parameter `{name}` must be nonnegative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("lookup table is not symmetric at ({l}, {m})")]
    Asymmetric { l: usize, m: usize },
    #[error("lookup table row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("truncation mismatch: {left} vs {right}")]
    TruncationMismatch { left: usize, right: usize },
    #[error("truncation level must be at least 1")]
    ZeroTruncation,
    #[error("histogram mass {mass} does not equal n = {n}")]
    MassMismatch { mass: u128, n: u64 },
    #[error("histogram contains mass 0")]
    ZeroMass,
    #[error("n must be positive")]
    ZeroN,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("step {dt} exceeds the stability bound {bound} = 1/(6 ‖K‖∞)")]
    StepTooLarge { dt: f64, bound: f64 },
    #[error("absolute tolerance {0} outside (0, 1e-6]")]
    BadTolerance(f64),
    #[error("requested time {t} beyond trajectory horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("exact enumeration supports n <= {max}, got {n}")]
    TooLarge { n: u64, max: u64 },
    #[error("n must be positive")]
    ZeroN,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("replica {index} is inconsistent with the ensemble: {reason}")]
    Inconsistent { index: usize, reason: String },
    #[error("empty ensemble")]
    Empty,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}
