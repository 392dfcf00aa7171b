use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("fact {fact_id}: {reason}")]
    Fact { fact_id: String, reason: String },

    #[error("no template covers relation `{relation}` (fact {fact_id})")]
    NoTemplate { fact_id: String, relation: String },

    #[error("entity pool `{category}` has {available} candidates, need {needed}")]
    PoolExhausted {
        category: String,
        available: usize,
        needed: usize,
    },

    #[error("two-hop chain broken: capital of {country} ({city}) has no famous_for fact")]
    BrokenChain { country: String, city: String },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, got {actual:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("non-finite loss {loss} at step {step} (epoch {epoch})")]
    NonFiniteLoss { step: u64, epoch: usize, loss: f64 },

    #[error("checkpoint checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    Checksum { stored: u64, computed: u64 },

    #[error("unsupported checkpoint format: {0}")]
    Format(String),

    #[error("lineage: {0}")]
    Lineage(String),

    #[error("context overflow for item {item}: {len} tokens > max_seq_len {max}")]
    ContextOverflow { item: String, len: usize, max: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
