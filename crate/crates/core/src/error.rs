use thiserror::Error;

/// Errors raised by the geometric and certification routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter is outside the numerically supported range.
    #[error("range error: {0}")]
    Range(String),

    /// A model or run was configured inconsistently.
    #[error("configuration error: {0}")]
    Config(String),

    /// A system produced a non-finite value while being evaluated.
    #[error("evaluation error at {point}: {reason}")]
    Evaluation { point: String, reason: String },

    /// An iterative procedure did not terminate within its step budget.
    #[error("no convergence after {steps} steps: {reason}")]
    NonConvergence { steps: usize, reason: String },

    /// A group construction produced a non-discrete (elliptic) element.
    #[error("construction error: word {word} has trace {trace:.12}")]
    Construction { word: String, trace: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
