use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    #[error("index out of range in {op}: {detail}")]
    Index { op: &'static str, detail: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint version mismatch: found {found}, supported {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("checkpoint truncated: {0}")]
    CheckpointTruncated(String),

    #[error("unknown tensor name in checkpoint: {0}")]
    UnknownTensor(String),
}

pub type Result<T> = std::result::Result<T, Error>;
