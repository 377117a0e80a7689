use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite (order {order}, pivot {pivot}); degenerate knots or weights are the usual cause")]
    NotPositiveDefinite { order: usize, pivot: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("csv parse error at line {line}: {msg}")]
    CsvFormat { line: usize, msg: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
