use thiserror::Error;

/// Errors raised by the multiphase library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite integrand")]
    NonFinite,

    #[error("norm bracket failure")]
    NormBracket,

    #[error("ball escapes Ω: center ({x}, {y}), radius {radius}")]
    BallEscapes { x: f64, y: f64, radius: f64 },

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("expression error at column {column}: {message}")]
    Expr { column: usize, message: String },

    #[error("linear solver failure: {0}")]
    LinearSolver(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("insufficient converged solves ({converged} of {total})")]
    InsufficientSolves { converged: usize, total: usize },

    #[error("(H′) violated: sup r/p = {sup_ratio} ≥ {limit}")]
    HPrimeViolated { sup_ratio: f64, limit: f64 },

    #[error("zero-set measure below γ: |E ∩ B| = {measure}, required {required}")]
    ZeroSetTooSmall { measure: f64, required: f64 },

    #[error("no pairs with |x−y| < 1/2")]
    NoAdmissiblePairs,

    #[error("empty sample set: {0}")]
    EmptySamples(String),

    #[error("config error at line {line}, column {column}: {message}")]
    Config { line: usize, column: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
