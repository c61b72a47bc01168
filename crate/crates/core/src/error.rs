//! Error type shared by every module.
//!
//! Each variant carries the `module::operation` that raised it so that
//! failures surfacing through the CLI can be traced without a backtrace.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: domain error: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("{op}: precondition violated: {msg}")]
    Precondition { op: &'static str, msg: String },

    #[error("{op}: dimension mismatch: {msg}")]
    Dimension { op: &'static str, msg: String },

    #[error("{op}: singular linear system (pivot {index} is {pivot:e})")]
    Singular {
        op: &'static str,
        index: usize,
        pivot: f64,
    },

    #[error("{op}: quadrature failed on [{lo}, {hi}]: {msg}")]
    Quadrature {
        op: &'static str,
        lo: f64,
        hi: f64,
        msg: String,
    },

    #[error("{op}: no convergence after {iterations} iterations (last contraction ratio {ratio:.3e})")]
    NonConvergence {
        op: &'static str,
        iterations: usize,
        ratio: f64,
    },

    #[error("{op}: estimate did not stabilize: {msg}")]
    NotStabilized { op: &'static str, msg: String },

    #[error("{op}: refusing to certify: {msg}")]
    Uncertified { op: &'static str, msg: String },

    #[error("{op}: insufficient samples: {msg}")]
    InsufficientSamples { op: &'static str, msg: String },

    #[error("{op}: configuration error: {msg}")]
    Config { op: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain { op, msg: msg.into() }
    }

    pub(crate) fn precondition(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Precondition { op, msg: msg.into() }
    }

    pub(crate) fn dimension(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Dimension { op, msg: msg.into() }
    }

    pub(crate) fn config(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Config { op, msg: msg.into() }
    }
}
