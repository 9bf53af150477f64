use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("empty input")]
    Empty,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("not a probability vector: {0}")]
    NotSimplex(String),

    #[error("neighbor count k={k} out of range for {n} points (need 1 <= k <= {})", .n.saturating_sub(1))]
    NeighborCount { k: usize, n: usize },

    #[error("feature row {0} has zero norm and cannot be normalized")]
    ZeroNorm(usize),

    #[error("rbf bandwidth is zero: all points coincide")]
    ZeroBandwidth,

    #[error("matrix is not symmetric: |w[{i}][{j}] - w[{j}][{i}]| = {gap}")]
    Asymmetric { i: usize, j: usize, gap: f64 },

    #[error("all probability mass falls on unmapped classes")]
    NoPooledMass,

    #[error("mapping line {line}: {message}")]
    Mapping { line: usize, message: String },

    #[error("embedding file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("{cell}: {source}")]
    Cell { cell: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error originates from the filesystem rather than from
    /// validation of user-provided content.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Cell { source, .. } => source.is_io(),
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
