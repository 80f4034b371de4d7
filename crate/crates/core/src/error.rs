use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch in {dimension}: expected {expected}, got {found}")]
    ShapeMismatch {
        dimension: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{modality}: missing inputs for months {gaps:?}")]
    MissingMonths { modality: String, gaps: Vec<String> },

    #[error("unsupported or mismatched CRS: {0}")]
    Crs(String),

    #[error("raster {path}: {message}")]
    Raster { path: PathBuf, message: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error(
        "format version mismatch: file has version {found}, this build reads version {expected}"
    )]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt container {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn raster(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Raster {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn corrupt(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Wraps the error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Crs(_) | Error::VersionMismatch { .. } => ErrorKind::Config,
            Error::Domain(_)
            | Error::Data(_)
            | Error::ShapeMismatch { .. }
            | Error::MissingMonths { .. }
            | Error::Raster { .. }
            | Error::Corrupt { .. }
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::Divergence { .. } | Error::Io { .. } => ErrorKind::Runtime,
            Error::Stage { source, .. } => source.kind(),
        }
    }
}
