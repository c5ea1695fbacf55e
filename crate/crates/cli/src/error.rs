use std::path::{Path, PathBuf};

use thiserror::Error;
use trace_edges::abdiv::AbdivError;
use trace_edges::bgp::BgpError;
use trace_edges::iep::IepError;
use trace_edges::metrics::MetricsError;
use trace_edges::synthetic_oracle::OracleError;
use trace_edges::tensor_io::FormatError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    Iep(#[from] IepError),
    #[error(transparent)]
    Abdiv(#[from] AbdivError),
    #[error(transparent)]
    Bgp(#[from] BgpError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => EXIT_INTERNAL,
            _ => EXIT_INPUT,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

/// Attaches a path to a format error.
pub trait WithPath<T> {
    fn at(self, path: &Path) -> Result<T, CliError>;
}

impl<T> WithPath<T> for Result<T, FormatError> {
    fn at(self, path: &Path) -> Result<T, CliError> {
        self.map_err(|source| CliError::Format {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl<T> WithPath<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T, CliError> {
        self.map_err(|e| CliError::Format {
            path: path.to_path_buf(),
            source: FormatError::IoFailure(e),
        })
    }
}
