use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("need at least {needed} points to fit {needed} centroids, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("collision group of size {size} exceeds s4_max {s4_max}")]
    CollisionOverflow { size: usize, s4_max: usize },

    #[error("unknown item {0}")]
    UnknownItem(usize),

    #[error("context overflow: need {required} positions, window holds {available}")]
    ContextOverflow { required: usize, available: usize },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("malformed file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("malformed record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("no supervised targets in sequence")]
    NoTargets,

    #[error("empty trie")]
    EmptyTrie,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
