// SPDX-License-Identifier: Apache-2.0

use std::io;

/// Errors produced by the pattern-generation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input data violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A matrix or tensor does not have the expected dimensions.
    #[error("size error: {0}")]
    Size(String),

    /// A numeric parameter is outside its permitted range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A computation produced NaN or infinity.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A topology was rejected by the pre-filter.
    #[error("topology rejected by pre-filter: {0}")]
    Prefilter(String),

    /// A binary or text file did not match its format.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
