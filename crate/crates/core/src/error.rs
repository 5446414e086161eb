use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("R-transform evaluated outside its domain at omega = {omega}: {reason}")]
    Domain { omega: f64, reason: &'static str },

    #[error("power series cannot be processed: {0}")]
    Series(String),

    #[error("not enough free cumulants: need {needed}, have {available}")]
    InsufficientCumulants { needed: usize, available: usize },

    #[error("degenerate ensemble: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("fixed point did not converge after {iterations} iterations (last chi = {last_chi})")]
    NoConvergence { iterations: usize, last_chi: f64 },

    #[error("non-finite value in {0}")]
    Divergence(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed matrix file: {reason}")]
    Format { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
