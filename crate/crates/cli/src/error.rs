use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] quench_core::Error),
    #[error("{path}: {source}")]
    At { path: PathBuf, source: quench_core::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
    /// Long runs that were not acknowledged with `--yes`.
    #[error("refused: {0}")]
    Refused(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    /// Output was written, but some rows could not be labelled.
    #[error("{failed} of {total} rows failed to label (listed in the sidecar)")]
    RowFailures { failed: usize, total: usize },
    #[error("rerun differs from manifest: {0}")]
    NotReproduced(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) | CliError::At { source: e, .. } if e.is_numerical() => 2,
            CliError::RowFailures { .. } | CliError::NotReproduced(_) => 2,
            CliError::VerifyFailed(_) => 2,
            CliError::Refused(_) => 3,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "numerical",
            3 => "resource",
            _ => "validation",
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches the file a core error came from.
pub fn at(path: impl Into<PathBuf>) -> impl FnOnce(quench_core::Error) -> CliError {
    let path = path.into();
    move |source| CliError::At { path, source }
}

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
