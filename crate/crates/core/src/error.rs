use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("csv parse error: {0}")]
    Parse(#[from] ParseError),

    #[error("training diverged for node {node} at epoch {epoch}: {detail}")]
    Diverged {
        node: usize,
        epoch: usize,
        detail: String,
    },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_stage(stage: &'static str, err: Error) -> Self {
        Error::Stage {
            stage,
            source: Box::new(err),
        }
    }
}

/// Diagnostics for the dataset CSV reader. Each malformation gets its own variant.
#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("empty file: no header row")]
    Empty,

    #[error("header is missing the `{0}` column")]
    MissingColumn(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("row {row}: expected {expected} cells, found {found}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column `{column}`: `{value}` is not numeric")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("inconsistent row counts: {0}")]
    InconsistentRows(String),

    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
