use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: IDX parse error at byte offset {offset}: {detail}")]
    IdxParse {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("{path}: CSV error at row {row}, column {col}: {detail}")]
    CsvParse {
        path: PathBuf,
        row: usize,
        col: usize,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    #[error(
        "basis budget exceeded: C({}, {n}) = {basis} monomials for d = {d}, order {n} (budget {budget})",
        d + n
    )]
    BudgetExceeded {
        d: usize,
        n: usize,
        basis: usize,
        budget: usize,
    },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
