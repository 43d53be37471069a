use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} positions, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid state space: {0}")]
    StateSpace(String),

    #[error("state space too large for enumeration: about {estimate:.3e} configurations exceeds cap {cap:.3e}")]
    TooLarge { estimate: f64, cap: f64 },

    #[error("invalid model parameters: {0}")]
    Model(String),

    #[error("evaluation at a boundary zero of phi_minus at x = {0}")]
    Boundary(f64),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("contour error: {0}")]
    Contour(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
