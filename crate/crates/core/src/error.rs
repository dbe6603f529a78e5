use thiserror::Error;

/// Errors raised anywhere in the two-stage pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("marker `{marker}`: {what} has length {actual}, expected {expected}")]
    DimensionMismatch {
        marker: String,
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("time {time} is outside the baseline range [0, {horizon}]")]
    OutOfRange { time: f64, horizon: f64 },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
