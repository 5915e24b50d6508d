use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed triple line (expected 3 tab-separated fields): {content:?}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        content: String,
    },

    #[error("entity {0:?} appears in both the training graph and the test graph")]
    VocabOverlap(String),

    #[error("relation {relation:?} in {path} does not occur in the training graph")]
    UnknownRelation { relation: String, path: PathBuf },

    #[error("{kind} id {id} out of range (size {size})")]
    IdOutOfRange { kind: &'static str, id: u64, size: usize },

    #[error("empty knowledge graph")]
    EmptyGraph,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rule file line {line}: {message}")]
    RuleParse { line: usize, message: String },

    #[error("rule instantiation graph error: {0}")]
    Rig(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("no trainable examples: {0}")]
    NoTrainingData(String),

    #[error("missing model: {0}")]
    MissingModel(&'static str),

    #[error("ranking error: {0}")]
    Ranking(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
