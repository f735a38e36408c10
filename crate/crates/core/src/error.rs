use std::path::PathBuf;

use thiserror::Error;

/// Failures raised by tensor operations on the tape.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("contract error: {0}")]
    Contract(String),
}

/// Failures while reading or validating datasets, lexicons and target sequences.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: example {id:?}, field `{field}`: {message}")]
    Invalid { line: usize, id: String, field: &'static str, message: String },
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("encode error: {0}")]
    Encode(String),
}

/// Failures while reading or writing checkpoints.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
