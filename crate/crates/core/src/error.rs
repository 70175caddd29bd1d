use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate relation: cell {0} related to itself")]
    DegenerateRelation(usize),

    #[error("`no relation` is not a valid label for a table relation")]
    InvalidLabel,

    #[error("cells {first} and {second} both claim grid slot (row {row}, col {col})")]
    Overlap {
        row: usize,
        col: usize,
        first: usize,
        second: usize,
    },

    #[error("{path}: malformed JSON at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{context}: schema error: {message}")]
    Schema { context: String, message: String },

    #[error("table has no cells")]
    EmptyTable,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("relation references unknown cell id {0}")]
    UnknownCell(usize),

    #[error("{kind} node {index} has no neighbours")]
    IsolatedNode { kind: &'static str, index: usize },

    #[error("loss over an empty edge set")]
    EmptyLoss,

    #[error("training graph {0} carries no edge labels")]
    Unlabeled(usize),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("prediction/truth pairing failed; orphans: {0:?}")]
    Pairing(Vec<String>),

    #[error("{0} table(s) failed; see the log for details")]
    TablesFailed(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            context: context.into(),
            message: message.into(),
        }
    }
}
