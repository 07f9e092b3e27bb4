use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid reward arithmetic: {0}")]
    InvalidArithmetic(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("selection error: {0}")]
    Selection(String),

    #[error("training diverged in head {head}: {detail}")]
    NonFinite { head: usize, detail: String },

    #[error("pipeline aborted at iteration {iteration}, prompt {prompt_id}: {source}")]
    Pipeline {
        iteration: usize,
        prompt_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
