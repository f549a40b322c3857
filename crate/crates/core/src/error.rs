//! Shared error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Bad configuration, bad shapes, missing prerequisites. Maps to CLI exit code 2.
    Config(String),
    /// Conjugate-symmetry violation in the spectral pipeline.
    Symmetry(String),
    /// Internal invariant broken (double backward, missing gradient, ...).
    Invariant(String),
    /// Numerical failure (NaN loss, divergence) with diagnostics.
    Numeric(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Symmetry(msg) => write!(f, "symmetry violation: {msg}"),
            Error::Invariant(msg) => write!(f, "invariant violation: {msg}"),
            Error::Numeric(msg) => write!(f, "numerical failure: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
