//! Error type shared by every module of the library.

use thiserror::Error;

/// Failure modes of the library.
///
/// The CLI maps these onto process exit codes, so the variants are grouped
/// by who is at fault: the caller's input, a modelling assumption, or the
/// numerics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A model parameter violates the spiked-model assumptions.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A shape or length mismatch between arguments.
    #[error("argument error: {0}")]
    Argument(String),

    /// The request is well-formed but the quantity does not exist.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A named modelling assumption does not hold for this input.
    #[error("assumption violated ({name}): {detail}")]
    Assumption { name: &'static str, detail: String },

    /// Root or ordering structure that theory guarantees was not found.
    #[error("structural failure: {0}")]
    Structural(String),

    /// Non-finite values or a failed factorization.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
