use thiserror::Error;

/// Errors produced by the optimization library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Bisection for the convexity boundary failed to converge.
    #[error("bisection did not converge within {iters} iterations; bracket [{lo}, {hi}]")]
    Bisection { lo: f64, hi: f64, iters: usize },

    /// The normal equations could not be factored even at the largest damping.
    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        /// Robust cost recorded at each inner iteration before the failure.
        trace: Vec<f64>,
    },

    /// Malformed input text.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The graph references missing vertices or carries invalid factors.
    #[error("graph integrity error: {0}")]
    Integrity(String),

    /// Collections that must align do not.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input too small or otherwise degenerate for the requested metric.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The requested outlier ratio cannot be realized on this graph.
    #[error("unsatisfiable outlier ratio: {0}")]
    UnsatisfiableRatio(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. } | Error::Bisection { .. })
    }
}
