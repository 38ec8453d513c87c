use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Numeric(String),

    #[error("{}", describe_io(path, message))]
    Io { path: PathBuf, message: String },
}

fn describe_io(path: &Path, message: &str) -> String {
    if path.as_os_str().is_empty() {
        message.to_string()
    } else {
        format!("{}: {message}", path.display())
    }
}

impl CliError {
    /// Process exit status: 1 usage, 2 numeric failure, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io { .. } => 3,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    /// Classifies a library error; file errors are attributed to `path`.
    pub fn at(path: &Path, err: freqblend::Error) -> Self {
        match err {
            freqblend::Error::Io(_) | freqblend::Error::Format(_) => CliError::io(path, err),
            other => other.into(),
        }
    }
}

impl From<freqblend::Error> for CliError {
    fn from(err: freqblend::Error) -> Self {
        use freqblend::Error as E;
        match err {
            E::NonFinite(_) | E::Numeric(_) | E::ZeroSum { .. } | E::ScoreOutOfRange(_) => {
                CliError::Numeric(err.to_string())
            }
            E::Io(_) | E::Format(_) => CliError::Io {
                path: PathBuf::new(),
                message: err.to_string(),
            },
            _ => CliError::Usage(err.to_string()),
        }
    }
}
