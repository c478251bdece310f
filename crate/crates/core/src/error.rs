use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are grouped loosely by the module that raises them; the FFI layer
/// maps each one onto a stable integer code via [`Error::code`].
#[derive(Debug, Error)]
pub enum Error {
    // numerics
    #[error("vector norm is below 1e-300; direction undefined")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTemperature(f64),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("matrix shape {rows}x{cols} does not match {len} values")]
    BadShape { rows: usize, cols: usize, len: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    // embedding store
    #[error("bad magic bytes {0:?}, expected \"BEMB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported BEMB version {0}")]
    BadVersion(u32),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("{0} trailing bytes after BEMB payload")]
    TrailingBytes(u64),
    #[error("declared shape {rows}x{cols} is empty or too large")]
    DimOverflow { rows: u64, cols: u64 },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("label {label} does not index any of the {categories} categories")]
    UnknownLabel { label: usize, categories: usize },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("text is empty after trimming")]
    EmptyText,

    // attributes
    #[error("k = {k} is outside [1, {max}]")]
    BadK { k: usize, max: usize },
    #[error("attribute set is empty")]
    EmptyAttributes,
    #[error("prompt template has no \"{{}}\" placeholder: {0:?}")]
    MissingPlaceholder(String),

    // distributed
    #[error("batch of {batch} rows cannot be split across {workers} workers")]
    IndivisibleBatch { batch: usize, workers: usize },
    #[error("worker states do not come from a single shard plan")]
    InconsistentShardPlan,
    #[error("worker {0} has not run the batch gather")]
    GatherNotRun(usize),

    // recognition
    #[error("fusion weight {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("dataset has no videos")]
    EmptyDataset,
    #[error("half-class evaluation needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("dimension {dim} is smaller than the {classes} classes requested")]
    DimTooSmall { dim: usize, classes: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Stable numeric code used across the C ABI. Zero is reserved for success.
    pub fn code(&self) -> i32 {
        match self {
            Error::ZeroVector => 1,
            Error::DimMismatch { .. } => 2,
            Error::NonPositiveTemperature(_) => 3,
            Error::NonFinite => 4,
            Error::BadShape { .. } => 5,
            Error::LengthMismatch { .. } => 6,
            Error::BadMagic(_) => 10,
            Error::BadVersion(_) => 11,
            Error::TruncatedFile { .. } => 12,
            Error::TrailingBytes(_) => 13,
            Error::DimOverflow { .. } => 14,
            Error::MissingFile(_) => 15,
            Error::UnknownLabel { .. } => 16,
            Error::Manifest(_) => 17,
            Error::EmptyText => 18,
            Error::BadK { .. } => 20,
            Error::EmptyAttributes => 21,
            Error::MissingPlaceholder(_) => 22,
            Error::IndivisibleBatch { .. } => 30,
            Error::InconsistentShardPlan => 31,
            Error::GatherNotRun(_) => 32,
            Error::LambdaOutOfRange(_) => 40,
            Error::EmptyDataset => 41,
            Error::TooFewClasses(_) => 42,
            Error::DimTooSmall { .. } => 43,
            Error::InvalidArgument(_) => 44,
            Error::Io { .. } => 50,
            Error::Json(_) => 51,
        }
    }
}
