use thiserror::Error;

/// Errors raised by the toolkit. Every variant carries a stable
/// machine-readable code (see [`MjsError::code`]) that the CLI and the C
/// interface expose verbatim.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MjsError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("mode index {index} out of range for {modes} modes")]
    IndexOutOfRange { index: usize, modes: usize },
    #[error("Markov chain is not ergodic: {0}")]
    NotErgodic(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("model file failed validation: {}", .0.join(", "))]
    LoadInvalid(Vec<String>),
    #[error("eigensolver failed to converge")]
    EigFailure,
    #[error("gamma {gamma} is outside [rho = {rho}, 1)")]
    GammaTooSmall { gamma: f64, rho: f64 },
    #[error("closed loop is not mean-square stable (rho = {0})")]
    NotMss(f64),
    #[error("linear system is singular")]
    Singular,
    #[error("Riccati iteration diverged: {0}")]
    Diverged(String),
    #[error("premise violated: {0}")]
    PremiseViolation(String),
    #[error("inner matrix R + B'phi(P)B is singular or ill-conditioned in mode {0}")]
    SingularInner(usize),
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("state norm exceeded overflow threshold")]
    NumericOverflow,
    #[error("every rollout overflowed")]
    AllUnstable,
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("CSV schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl MjsError {
    pub fn code(&self) -> &'static str {
        match self {
            MjsError::DimMismatch(_) => "DIM_MISMATCH",
            MjsError::IndexOutOfRange { .. } => "INDEX_OUT_OF_RANGE",
            MjsError::NotErgodic(_) => "NOT_ERGODIC",
            MjsError::NoConvergence(_) => "NO_CONVERGENCE",
            MjsError::Parse { .. } => "PARSE_ERROR",
            MjsError::LoadInvalid(_) => "LOAD_INVALID",
            MjsError::EigFailure => "EIG_FAILURE",
            MjsError::GammaTooSmall { .. } => "GAMMA_TOO_SMALL",
            MjsError::NotMss(_) => "NOT_MSS",
            MjsError::Singular => "SINGULAR",
            MjsError::Diverged(_) => "DIVERGED",
            MjsError::PremiseViolation(_) => "PREMISE_VIOLATION",
            MjsError::SingularInner(_) => "SINGULAR_INNER",
            MjsError::HypothesisViolation(_) => "HYPOTHESIS_VIOLATION",
            MjsError::NumericOverflow => "NUMERIC_OVERFLOW",
            MjsError::AllUnstable => "ALL_UNSTABLE",
            MjsError::Degenerate(_) => "DEGENERATE",
            MjsError::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            MjsError::InvalidArgument(_) => "INVALID_ARGUMENT",
            MjsError::Io(_) => "IO_ERROR",
        }
    }
}

impl From<std::io::Error> for MjsError {
    fn from(e: std::io::Error) -> Self {
        MjsError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MjsError>;
