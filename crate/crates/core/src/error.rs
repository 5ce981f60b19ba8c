use thiserror::Error;

/// Errors raised by the library. The variant names the subsystem that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("lattice: {0}")]
    Lattice(String),

    #[error("kernel: {0}")]
    Kernel(String),

    #[error("data: {0}")]
    Data(String),

    #[error("data: {path}: row {row}: {msg}")]
    Parse { path: String, row: usize, msg: String },

    #[error("model: {0}")]
    Model(String),

    #[error("model: checksum mismatch (file corrupted or truncated)")]
    Checksum,

    #[error("model: unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("model: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
