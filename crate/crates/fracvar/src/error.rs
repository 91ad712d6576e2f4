use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("insufficient derivative order: need {needed}, model provides {available}")]
    InsufficientOrder { needed: usize, available: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("singular Jacobian (condition estimate {condition:.3e})")]
    SingularJacobian {
        condition: f64,
        last_iterate: Vec<f64>,
        history: Vec<f64>,
    },

    #[error("Newton did not converge: {reason} (residual {residual:.3e})")]
    NoConvergence {
        reason: String,
        residual: f64,
        last_iterate: Vec<f64>,
        history: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
