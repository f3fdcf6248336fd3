use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instruction: {0}")]
    InvalidInstruction(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unknown tensor {0:?} in checkpoint")]
    UnknownTensor(String),
    #[error("degenerate slot {0}: attention or alpha mass is zero")]
    DegenerateSlot(usize),
    #[error("NaN in cost matrix")]
    NanCost,
    #[error("{0}")]
    Empty(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
