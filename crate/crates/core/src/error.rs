//! Error types shared across the crate.

use thiserror::Error;

/// Errors surfaced by configuration, geometry, estimation and solver code.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad key, violated invariant).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative solver failed to converge or hit a singular system.
    #[error("solver error: {0}")]
    Solver(String),

    /// Dense linear algebra failure (non positive definite, singular).
    #[error("linear algebra error: {0}")]
    Linalg(String),

    /// A caller violated a state-transition contract.
    #[error("contract error: {0}")]
    Contract(String),

    /// File I/O while reading configs or writing outputs.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
