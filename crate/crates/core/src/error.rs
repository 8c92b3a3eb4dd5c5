// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Errors produced by the detection toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// KL divergence is infinite when the data is positive where the reconstruction is zero.
    #[error("KL divergence undefined at cell ({row}, {col}): data {value} > 0 but reconstruction is 0")]
    DivergenceUndefined { row: usize, col: usize, value: f64 },

    #[error("non-finite loss at iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("ingest {path}: {message}")]
    Ingest { path: String, message: String },

    #[error("covariance for {spec} is not positive definite")]
    NotPositiveDefinite { spec: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    pub fn invalid_config(msg: impl Into<String>) -> Self {
        Self::InvalidConfig(msg.into())
    }

    pub fn ingest(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Ingest {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
