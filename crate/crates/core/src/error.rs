use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: String,
        expected: String,
        actual: String,
    },

    #[error("rank error: {0}")]
    Rank(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate spectrum: all eigenvalues are zero")]
    DegenerateSpectrum,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("plan error: {0}")]
    Plan(String),

    #[error("empty plan: network has no compressible convolution layer")]
    EmptyPlan,

    #[error("data error: {0}")]
    Data(String),

    #[error("unsupported layer: {0}")]
    UnsupportedLayer(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: malformed header at byte {offset}: {message}")]
    MalformedHeader {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: truncated payload at byte {offset}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        offset: u64,
        expected: u64,
        found: u64,
    },

    #[error("{path}: unsupported format version {found} at byte {offset} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        offset: u64,
        found: u64,
        expected: u64,
    },

    #[error("{path}: bad format at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            axis: axis.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
