use std::path::PathBuf;

/// Crate-wide error type. Numeric divergence is kept distinct from
/// configuration problems so callers (notably the CLI) can map them to
/// different exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("training diverged at iteration {iter} (loss = {loss:e})")]
    Diverged { iter: usize, loss: f64 },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("bad tensor file {path}: {reason}")]
    BadTensorFile { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors that indicate a numerically diverged computation
    /// rather than a misconfiguration.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NonFinite { .. })
    }
}
