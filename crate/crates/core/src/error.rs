use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CteError>;

#[derive(Debug, Error)]
pub enum CteError {
    /// Shapes of two operands disagree, or data length does not match a declared shape.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Magic number, record layout or ordering is wrong.
    #[error("format error: {0}")]
    Format(String),

    /// Input ended before the declared payload.
    #[error("truncated input: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    /// Well-formed record carrying an out-of-range value.
    #[error("data error: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CteError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CteError::Io {
            path: path.into(),
            source,
        }
    }
}
