use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid permutation: {0}")]
    Permutation(String),

    #[error("node index {index} out of range for a graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("non-finite value in loss term `{term}` ({phase}, epoch {epoch})")]
    NonFinite {
        term: String,
        phase: &'static str,
        epoch: usize,
    },

    #[error("{}: {message}", location(path, *line))]
    Dataset {
        path: PathBuf,
        line: Option<u64>,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn location(path: &std::path::Path, line: Option<u64>) -> String {
    match line {
        Some(l) => format!("{} (row {l})", path.display()),
        None => path.display().to_string(),
    }
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True when the error reports a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
