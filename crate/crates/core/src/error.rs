use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("{model} expects {expected} participants, got {got}")]
    Arity {
        model: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("solver diverged at iteration {iteration}: residual {residual:e} grew more than 10x over 50 iterations")]
    Diverged { iteration: usize, residual: f64 },

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("calibration residual {worst:.4} exceeds tolerance {tolerance:.4}: {detail}")]
    Calibration {
        worst: f64,
        tolerance: f64,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
