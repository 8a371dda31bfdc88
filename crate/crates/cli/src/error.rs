use std::path::{Path, PathBuf};

use rednet_core::ErrorKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input, config or schema. Exit status 2.
    #[error("{0}")]
    Validation(String),

    /// A numerical failure in strict mode. Exit status 3.
    #[error("{0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<rednet_core::Error> for CliError {
    fn from(e: rednet_core::Error) -> Self {
        match e.kind() {
            ErrorKind::Validation => CliError::Validation(e.to_string()),
            ErrorKind::Numerical => CliError::Numerical(e.to_string()),
        }
    }
}

/// Maps a CSV failure on `path` to I/O when the file itself is unreadable and
/// to validation when its contents are malformed.
pub fn from_csv(path: &Path, e: csv::Error) -> CliError {
    let located = |what: String| match e.position() {
        Some(pos) => format!("{}: line {}: {what}", path.display(), pos.line()),
        None => format!("{}: {what}", path.display()),
    };
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!(),
        },
        _ => CliError::Validation(located(e.to_string())),
    }
}
