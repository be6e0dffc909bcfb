use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiseError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dim {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: index {index} out of range for size {size}")]
    Index {
        op: &'static str,
        index: usize,
        size: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error in series `{series}` at row {row}: {message}")]
    Ingestion {
        series: String,
        row: usize,
        message: String,
    },

    #[error("training diverged at epoch {epoch} on series `{series}`")]
    Divergence { epoch: usize, series: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, RiseError>;
