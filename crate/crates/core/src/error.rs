use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error in `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("encode error: {0}")]
    Encode(String),

    #[error("decode error: {0}")]
    Decode(#[from] DecodeError),

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// The check that rejected a wire message.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic bytes {0:02x?}")]
    Magic([u8; 4]),
    #[error("unsupported format version {0:#06x}")]
    Version(u16),
    #[error("layout digest mismatch: message {found:#018x}, expected {expected:#018x}")]
    Digest { expected: u64, found: u64 },
    #[error("row count mismatch: message carries {found} rows, layout has {expected}")]
    RowCount { expected: u32, found: u32 },
    #[error("layer {layer} keeps {found} rows, quota is {expected}")]
    Popcount {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("padding bits set in pattern byte")]
    Padding,
    #[error("top-k index {index} out of range (payload has {len} scalars)")]
    TopKIndex { index: u32, len: usize },
    #[error("top-k indices not strictly ascending at position {0}")]
    TopKOrder(usize),
    #[error("truncated message: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
}
