use thiserror::Error;

/// Errors raised by model construction, simulation, and fitting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("spin index {index} out of range for {count} spins")]
    SiteOutOfRange { index: usize, count: usize },

    #[error("{count} spins exceed the configured maximum of {max}")]
    TooManySpins { count: usize, max: usize },

    #[error("invalid spin system: {0}")]
    InvalidSystem(String),

    #[error("parameter dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("coupling matrix `{0}` is not symmetric with zero diagonal")]
    NonSymmetricCoupling(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("eigensolver did not converge")]
    EigenNonConvergence,

    #[error("species `{0}` is not present in the spin system")]
    UnknownSpecies(String),

    #[error("unknown spin label `{0}`")]
    UnknownLabel(String),

    #[error("empty species selection")]
    EmptySelection,

    #[error("empty transition list")]
    EmptyTransitions,

    #[error("non-positive T2* value {0}")]
    NonPositiveWidth(f64),

    #[error("invalid frequency axis: {0}")]
    InvalidAxis(String),

    #[error("eigenpair ({i}, {j}) is invalid: {reason}")]
    InvalidPrep { i: usize, j: usize, reason: String },

    #[error("invalid fit problem: {0}")]
    InvalidProblem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{failed} of {trials} trials failed to converge")]
    TooManyFailures { failed: usize, trials: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
