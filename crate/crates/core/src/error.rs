use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by feature-file decoding. Each corruption class has its own
/// variant so callers (and the fuzz harness) can tell them apart.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {found:?}, expected \"MMFT\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported feature-file version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("file truncated: {actual} bytes, header needs at least {needed}")]
    Truncated { actual: u64, needed: u64 },
    #[error("size mismatch: header implies {expected} bytes, file has {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("empty feature file: {count} x {dim}")]
    Empty { count: usize, dim: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape { op: &'static str, expected: String, got: String },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}: {cause}")]
    Format { path: PathBuf, cause: FormatError },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io { path: path.into(), cause }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
