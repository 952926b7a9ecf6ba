//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge ({src}, {dst}) references a node outside 0..{num_nodes}")]
    InvalidEdge {
        src: usize,
        dst: usize,
        num_nodes: usize,
    },

    #[error("duplicate edge ({src}, {dst})")]
    DuplicateEdge { src: usize, dst: usize },

    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("rate {value} outside valid range {range} for {what}")]
    InvalidRate {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("probability underflow: masked node {node} has log-probability {log_prob}")]
    NumericalUnderflow { node: usize, log_prob: f64 },

    #[error("mask set is empty; at least one masked node is required")]
    EmptyMaskSet,

    #[error("cannot sample a negative node: graph has {num_nodes} nodes, need one outside the edge endpoints")]
    CannotSampleNegative { num_nodes: usize },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("training split is degenerate: every training node has class {class}")]
    DegenerateSplit { class: usize },

    #[error("insufficient data: have {got}, need at least {need} {what}")]
    InsufficientData {
        what: &'static str,
        got: usize,
        need: usize,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid node id {id} (nodes are 0..{num_nodes})")]
    InvalidNodeId { id: usize, num_nodes: usize },

    #[error("checkpoint incompatible with this dataset/config: {0}")]
    IncompatibleCheckpoint(String),

    #[error("dataset has no labels")]
    MissingLabels,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn format(path: impl ToString, line: usize, message: impl ToString) -> Self {
        Error::Format {
            path: path.to_string(),
            line,
            message: message.to_string(),
        }
    }
}
