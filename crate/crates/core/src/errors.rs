//! Error types shared across the toolkit.

use thiserror::Error;

pub type QResult<T> = Result<T, QuenchedError>;

#[derive(Error, Debug)]
pub enum QuenchedError {
    /// Invalid experiment configuration. Collects every violation found, with
    /// field paths, not just the first one.
    #[error("invalid configuration:\n{}", .violations.join("\n"))]
    Config { violations: Vec<String> },

    /// An argument outside an operation's domain (bad twist, negative n, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A documented precondition was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Required state (equivariant stack, variance estimate, ...) not built yet.
    #[error("missing state: {0}")]
    State(String),

    /// An iterative estimate failed to converge within its cap.
    #[error("no convergence after {steps} relaxation steps (residual {residual:.3e})")]
    Convergence { steps: usize, residual: f64 },

    /// A block tiling that cannot be realized with positive integer lengths.
    #[error("infeasible block tiling: {0}")]
    Infeasible(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("report serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl QuenchedError {
    pub fn config(violations: Vec<String>) -> Self {
        QuenchedError::Config { violations }
    }
}
