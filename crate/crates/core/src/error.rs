use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("load error at row {row}, column {column}: {message}")]
    Load {
        row: usize,
        column: String,
        message: String,
    },

    #[error("load error: {0}")]
    LoadFile(String),

    #[error("imputation error: {0}")]
    Imputation(String),

    #[error("clustering error: {0}")]
    Fit(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Model and input disagree on feature layout or task.
    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
