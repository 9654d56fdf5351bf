use thiserror::Error;

use crate::solvers::Trace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A step-size rule of the selected algorithm does not hold.
    #[error("step-size rule {rule} violated: {detail}")]
    StepSizeRule { rule: &'static str, detail: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged { what: &'static str, iterations: usize },

    #[error("non-finite iterate at t = {}", .0.t)]
    Diverged(Box<Divergence>),

    #[error("evaluation error: {0}")]
    Evaluation(String),
}

/// Evidence collected when an iterate stops being finite.
#[derive(Debug)]
pub struct Divergence {
    pub t: usize,
    pub trace: Trace,
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
