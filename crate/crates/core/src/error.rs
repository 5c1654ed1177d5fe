use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: invalid field `{field}`: {message}")]
    Validation {
        line: usize,
        field: String,
        message: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds the configured maximum length {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite total loss (l_cl={l_cl}, l_acd={l_acd}, l_acsc={l_acsc})")]
    NonFiniteLoss { l_cl: f64, l_acd: f64, l_acsc: f64 },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("prediction and gold lengths differ ({preds} vs {gold})")]
    Misaligned { preds: usize, gold: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
