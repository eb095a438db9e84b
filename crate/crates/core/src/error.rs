use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate record (video {video_id}, frame {frame_id}, {hand})")]
    DuplicateRecord {
        video_id: String,
        frame_id: u64,
        hand: String,
    },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("already right")]
    AlreadyRight,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    Version(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("no cross-video candidates for row {0}")]
    NoCrossVideoCandidates(usize),

    #[error("zero-norm feature at index {0}")]
    ZeroNorm(usize),

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
