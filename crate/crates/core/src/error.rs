use thiserror::Error;

pub type Result<T> = std::result::Result<T, CmheError>;

#[derive(Debug, Error)]
pub enum CmheError {
    #[error("schema error: {0}")]
    Schema(String),

    /// A data row failed validation. `row` is 1-based and excludes the header.
    #[error("row {row}, column `{column}`: {message}")]
    Validation {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in parameter block `{block}`")]
    NonFinite { block: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("sample {sample}: {message}")]
    Sample { sample: usize, message: String },

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CmheError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CmheError::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        CmheError::Shape(msg.into())
    }
}
