//! Crate-wide error type. Variants are grouped by failure class so the CLI
//! can map them onto distinct process exit codes.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: malformed record: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty corpus: no tokens found in the given files")]
    EmptyCorpus,

    #[error("record {id}: answer_text not found at answer_start after normalization")]
    UnlocatableAnswer { id: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid span set: {0}")]
    InvalidSpans(String),

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("position {pos} out of range for sequence of length {len}")]
    PositionOutOfRange { pos: usize, len: usize },

    #[error("corrupt instance: {0}")]
    CorruptInstance(String),

    #[error("cosine similarity undefined for zero-norm vector")]
    ZeroNormVector,

    #[error("no objective term enabled")]
    NoObjectiveEnabled,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

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

    pub fn malformed(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for this failure class: 3 i/o, 4 data, 5 numeric,
    /// 6 internal. Code 2 is reserved for command-line usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Json { .. } => 3,
            Error::Malformed { .. }
            | Error::EmptyCorpus
            | Error::UnlocatableAnswer { .. }
            | Error::Config(_)
            | Error::InvalidSpans(_)
            | Error::SequenceTooLong { .. }
            | Error::PositionOutOfRange { .. }
            | Error::CorruptInstance(_)
            | Error::Checkpoint(_) => 4,
            Error::ZeroNormVector | Error::NoObjectiveEnabled | Error::NonFinite { .. } => 5,
            Error::Internal(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
