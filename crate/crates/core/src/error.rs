use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The requested computation exceeds a caller-provided size budget.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("{stage} failed for dataset {dataset}: {source}")]
    Stage {
        dataset: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the dataset and pipeline stage it came from.
    pub fn at_stage(self, dataset: impl Into<String>, stage: &'static str) -> Self {
        Error::Stage {
            dataset: dataset.into(),
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input data or configuration, as opposed
    /// to failures inside the toolkit itself.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Domain(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Config(_)
            | Error::Capacity(_)
            | Error::Io { .. } => true,
            Error::Stage { source, .. } => source.is_input_error(),
            Error::Serialization(_) => false,
        }
    }
}
