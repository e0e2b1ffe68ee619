//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed dataset content, reported with its 1-based line number.
    #[error("line {line}: {msg}")]
    Data { line: usize, msg: String },

    #[error("unknown label `{0}` (expected \"safe\" or \"unsafe\")")]
    UnknownLabel(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence length {len} exceeds max_len {max}")]
    LengthOverflow { len: usize, max: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenIdOutOfRange { id: u32, vocab: usize },

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("checkpoint version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checksum mismatch for `{0}`")]
    ChecksumMismatch(String),

    #[error("query client: {0}")]
    Client(String),
}

pub type Result<T> = std::result::Result<T, Error>;
