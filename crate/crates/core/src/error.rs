use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("index {index} out of bounds for length {len} in {op}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid network configuration: {0}")]
    Network(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("missing data file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: file size {len} is not a valid record layout (record size {record})", .path.display())]
    FileSize {
        path: PathBuf,
        len: u64,
        record: usize,
    },

    #[error("{}: truncated record at byte offset {offset}", .path.display())]
    TruncatedRecord { path: PathBuf, offset: u64 },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
