use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph is empty")]
    EmptyGraph,

    #[error("node {node} is not in the graph ({node_count} nodes)")]
    UnknownNode { node: usize, node_count: usize },

    #[error("cascade is empty")]
    EmptyCascade,

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("gave up after {attempts} simulation attempts with {kept} of {wanted} cascades kept")]
    GaveUp {
        attempts: usize,
        kept: usize,
        wanted: usize,
    },

    #[error("training diverged at epoch {epoch} (lr {lr})")]
    Diverged { epoch: usize, lr: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
