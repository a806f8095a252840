use thiserror::Error;

/// Errors raised by the model, solvers and learners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported uncertainty set variant `{0}` for this operation")]
    UnsupportedVariant(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("feature matrix has rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("iteration is not a contraction: {0}")]
    NonContraction(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
