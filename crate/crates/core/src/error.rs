//! Error type shared by every module of the crate.

use thiserror::Error;

use crate::calibration::FitResult;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parameter `{name}` = {value} lies outside its domain")]
    Domain { name: &'static str, value: f64 },

    #[error("moment overflow at order {order}; lower the number of quadrature points")]
    MomentOverflow { order: usize },

    #[error("Gram matrix is not positive definite (row {row}, pivot {pivot:e})")]
    Cholesky { row: usize, pivot: f64 },

    #[error("tridiagonal eigenvalue iteration did not converge")]
    EigenNoConvergence,

    #[error("no implied volatility exists for price {price} (bounds {lower}..{upper})")]
    NoImpliedVol { price: f64, lower: f64, upper: f64 },

    #[error("root finder did not converge after {iterations} iterations")]
    RootNoConvergence { iterations: usize },

    #[error("expansion order {order} is not supported for {kind} randomization")]
    UnsupportedOrder { order: usize, kind: &'static str },

    #[error("expansion left its validity region at m = {m} (value {value})")]
    ExpansionGuard { m: f64, value: f64 },

    #[error("normal CDF precision exhausted while inverting {0}")]
    Precision(f64),

    #[error("calibration did not converge within budget (best sse {:e})", best.sse)]
    CalibrationNotConverged { best: Box<FitResult> },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
