use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("channel mismatch: expected {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("convolution output would be empty for input {height}x{width} (kernel {kernel}, stride {stride}, padding {padding})")]
    EmptyOutput {
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("weights file: bad magic {found:?} (expected \"AVDN\")")]
    WeightsMagic { found: [u8; 4] },

    #[error("weights file: unsupported version {0}")]
    WeightsVersion(u32),

    #[error("weights file truncated while reading {0}")]
    WeightsTruncated(String),

    #[error("weights file: tensor {index} is {found:?} {found_dims:?}, network expects {expected:?} {expected_dims:?}")]
    WeightsDimension {
        index: usize,
        expected: String,
        expected_dims: Vec<usize>,
        found: String,
        found_dims: Vec<usize>,
    },

    #[error("weights file: expected {expected} tensors, found {found}")]
    WeightsCount { expected: usize, found: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: field {field} out of range: {value}")]
    OutOfRange {
        line: usize,
        field: &'static str,
        value: String,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("bad image magic {0:?}")]
    ImageMagic(String),

    #[error("malformed image header: {0}")]
    ImageHeader(String),

    #[error("image payload truncated: expected {expected} bytes, got {actual}")]
    ImageTruncated { expected: usize, actual: usize },

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
