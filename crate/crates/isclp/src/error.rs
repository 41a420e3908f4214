//! Error types shared across the crate.

/// Errors produced by configuration validation, input checking and the
/// numerical kernels.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (window/hop relation, filter length, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid input data (dimension mismatch, non-finite values, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A matrix expected to be positive definite failed factorization;
    /// `minor` is the index of the offending leading principal minor.
    #[error("matrix not positive definite at leading minor {minor}")]
    NotPositiveDefinite { minor: usize },

    /// Other numerical failure (rank deficiency, ill-conditioning, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
