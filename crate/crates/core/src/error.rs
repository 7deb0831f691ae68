use std::io;

use thiserror::Error;

pub type Result<T, E = McuError> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the CLI exit code they map to; see
/// [`McuError::category`].
#[derive(Debug, Error)]
pub enum McuError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("corrupt candidate file: {0}")]
    Corruption(String),

    #[error("unsupported candidate file version {0}")]
    UnsupportedVersion(u32),

    #[error("sampler initialisation failed: {0}")]
    Initialization(String),

    #[error("divergence: {message}")]
    Divergence {
        message: String,
        /// Last iterate whose entries were all finite.
        last_finite: Vec<f64>,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("recipe stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<McuError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
}

impl McuError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        McuError::InvalidArgument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        McuError::InvalidData(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        McuError::Corruption(msg.into())
    }

    pub fn in_stage(self, stage: &str) -> Self {
        McuError::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            McuError::InvalidArgument(_) => ErrorCategory::Usage,
            McuError::InvalidData(_)
            | McuError::Schema(_)
            | McuError::Parse { .. }
            | McuError::Corruption(_)
            | McuError::UnsupportedVersion(_)
            | McuError::Io(_) => ErrorCategory::Data,
            McuError::Initialization(_) | McuError::Divergence { .. } | McuError::Numerical(_) => {
                ErrorCategory::Numerical
            }
            McuError::Stage { source, .. } => source.category(),
        }
    }
}
