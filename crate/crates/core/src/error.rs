use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix dimensions do not match the group structure.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation only supports a specific family of structures.
    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),

    /// An iterative solver failed to reach its target.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// No feasible path reached the target endpoint.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Malformed input data (NaN costs, weights not summing to one, ...).
    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
