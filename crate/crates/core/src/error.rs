use thiserror::Error;

/// Errors raised by the smoothed operators, the DP engines and the file loaders.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),

    #[error("all entries are masked; the smoothed max of an empty set is undefined")]
    EmptySupport,

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid DAG: {0}")]
    InvalidDag(String),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid potentials: {0}")]
    InvalidPotentials(String),

    #[error("path count {count} exceeds the cap of {cap}")]
    PathCapExceeded { count: f64, cap: u64 },

    #[error("maximizing path is not unique ({count} optimal paths)")]
    NonUniqueArgmax { count: f64 },

    #[error("{0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
