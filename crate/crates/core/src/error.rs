use thiserror::Error;

/// Errors raised anywhere in the knockoff pipeline.
#[derive(Debug, Error)]
pub enum KnockoffError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("data error at row {row}, column {col}: {msg}")]
    Data { row: usize, col: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KnockoffError>;

impl KnockoffError {
    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            KnockoffError::DimensionMismatch(_) => "dimension_mismatch",
            KnockoffError::InvalidInput(_) => "invalid_input",
            KnockoffError::NonFinite(_) => "non_finite",
            KnockoffError::NotPositiveDefinite(_) => "not_positive_definite",
            KnockoffError::IndexOutOfRange { .. } => "index_out_of_range",
            KnockoffError::InvalidPartition(_) => "invalid_partition",
            KnockoffError::Sampler(_) => "sampler",
            KnockoffError::Unsupported(_) => "unsupported",
            KnockoffError::Data { .. } => "data",
            KnockoffError::Io(_) => "io",
            KnockoffError::Json(_) => "json",
        }
    }
}
