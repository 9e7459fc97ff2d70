use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error in {op}: non-finite value produced")]
    Numeric { op: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-deterministic evaluation: {0}")]
    Determinism(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("least-squares solve failed: {0}")]
    Solve(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numeric(op: impl Into<String>) -> Self {
        Error::Numeric { op: op.into() }
    }
}
