use std::path::PathBuf;

use thiserror::Error;

/// Problems with the configuration file; the CLI exits with status 2.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config error at {path} (line {line}, column {column}): {message}")]
    Syntax { path: String, line: usize, column: usize, message: String },
    #[error("config error at {path}: {message}")]
    Field { path: String, message: String },
    #[error("config error at {path}: kernel parse error at position {position}: {message}")]
    Kernel { path: String, position: usize, message: String },
}

/// Failures while running a command.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(memflow_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl From<memflow_core::Error> for RunError {
    fn from(e: memflow_core::Error) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl RunError {
    /// Process exit status: `2` for configuration problems, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Core(memflow_core::Error::Parse { .. }) => 2,
            _ => 1,
        }
    }
}
