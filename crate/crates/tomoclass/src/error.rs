//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the tomoclass library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// File does not carry the expected magic or is structurally malformed.
    #[error("format error: {0}")]
    Format(String),

    /// Header dims are inconsistent with the payload length.
    #[error("truncation error: {0}")]
    Truncated(String),

    /// A header field holds an invalid value.
    #[error("header error: {0}")]
    Header(String),

    /// Array dimensions of two inputs do not agree.
    #[error("shape error: {0}")]
    Shape(String),

    /// A value lies outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation parameter is out of range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A requested polarimetric channel is absent from the cube.
    #[error("channel error: {0}")]
    Channel(String),

    /// Rejection sampling exhausted its attempt budget.
    #[error("saturation error: placement stopped at test fraction {achieved:.4} (target {target:.4})")]
    Saturation { achieved: f64, target: f64 },

    /// Input data is empty or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// Feature schema of the rows does not match the model.
    #[error("schema error: model schema {expected:#018x} does not match table schema {actual:#018x}")]
    Schema { expected: u64, actual: u64 },

    /// Kernel matrix stayed non positive definite after jitter escalation.
    #[error("conditioning error: {0}")]
    Conditioning(String),

    /// A statistic is undefined for the given sample.
    #[error("statistic error: {0}")]
    Statistic(String),

    /// Kernel bandwidth collapsed to zero.
    #[error("bandwidth error: {0}")]
    Bandwidth(String),

    /// Text input (LiDAR, CSV, sidecar) could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
