use thiserror::Error;

/// Errors raised by the inference routines and experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("likelihood returned invalid value {0} (must be finite and non-negative)")]
    InvalidLikelihood(f64),

    #[error("likelihood scale kappa must lie in (0, 1], got {0}")]
    InvalidKappa(f64),

    #[error("non-finite component in hypothesis vector")]
    NonFinite,

    #[error("covariance is not positive semidefinite within jitter tolerance")]
    Factorization,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("time step must be non-negative, got {0}")]
    NegativeTimeStep(f64),

    #[error("model has zero covariance trace; experiment design is undefined")]
    DegenerateModel,

    #[error("accepted count {accepted} exceeds attempts {attempts}")]
    CountExceedsAttempts { accepted: u64, attempts: u64 },

    #[error("registers are not comparable: {0} vs {1} updates")]
    IncomparableRegisters(u64, u64),

    #[error("all features have zero variance across the particle cloud")]
    DegenerateCloud,

    #[error("class {0} has posterior mass but no training vectors")]
    CorpusIntegrity(u8),

    #[error("malformed IDX data: {0}")]
    Idx(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FilterError {
    fn from(e: std::io::Error) -> Self {
        FilterError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FilterError>;
