use thiserror::Error;

/// Errors produced by the library. Each variant maps onto one CLI exit-code class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    RecordParse { line: usize, message: String },

    #[error("diff: {0}")]
    Diff(#[from] DiffError),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("sample generation ({task}): {message}")]
    Sample { task: String, message: String },

    #[error("model: {0}")]
    Model(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Unified-diff parse failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("diff contains no hunks")]
    Empty,
    #[error("binary patches are not supported ({0})")]
    Binary(String),
    #[error("mode-only change with no content hunks ({0})")]
    ModeOnly(String),
    #[error("malformed hunk header `{0}`")]
    BadHeader(String),
    #[error("hunk `{header}`: {message}")]
    InconsistentHunk { header: String, message: String },
    #[error("line {line}: unexpected content outside a hunk: `{text}`")]
    Stray { line: usize, text: String },
}

pub type Result<T> = std::result::Result<T, Error>;
