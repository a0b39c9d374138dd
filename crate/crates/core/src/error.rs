//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (bad schedule, kernel size, intrinsics, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Broken or missing dataset / run artifacts.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// A tape primitive was applied outside its domain (log of a
    /// non-positive value, division by zero).
    #[error("domain error: {op} applied to operand {operand}")]
    Domain { op: &'static str, operand: f64 },

    /// A forward pass produced a non-finite activation.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss or gradient.
    #[error("numerical divergence at iteration {iter}: {detail}")]
    Divergence { iter: u64, detail: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
