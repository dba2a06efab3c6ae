use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{file}: {message}")]
    Schema { file: PathBuf, message: String },

    #[error("{0} does not exist")]
    Missing(PathBuf),

    #[error("frame indices differ: {only_estimates} frame(s) only in estimates (first {first_estimate:?}), {only_gt} only in ground truth (first {first_gt:?})")]
    FrameMismatch { only_estimates: usize, first_estimate: Option<u64>, only_gt: usize, first_gt: Option<u64> },

    #[error(transparent)]
    Core(#[from] volmocap::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub(crate) fn schema(file: impl Into<PathBuf>, message: impl Into<String>) -> CliError {
    CliError::Schema { file: file.into(), message: message.into() }
}
