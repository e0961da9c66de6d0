use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A documented precondition of an operation does not hold.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure on a {rows}x{cols} matrix: {detail}")]
    Numerical {
        rows: usize,
        cols: usize,
        detail: String,
    },

    #[error("moment block {block}: {message}")]
    Evaluation { block: usize, message: String },

    #[error("no convergence after {iterations} iterations (best objective {objective:e})")]
    NonConvergence {
        iterations: usize,
        objective: f64,
        best: Vec<f64>,
    },

    #[error("degenerate system: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures caused by the inputs rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Contract(_) | Error::Evaluation { .. })
    }
}
