//! File formats, run manifests and the `rps` command-line driver on top of
//! `rps-core`.

pub mod bundle;
pub mod commands;
pub mod io;
pub mod manifest;

use std::path::PathBuf;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const GUARD: i32 = 4;
    pub const SOUNDNESS: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] rps_core::Error),

    #[error("soundness violation: {0}")]
    Soundness(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use rps_core::Error as E;
        match self {
            CliError::Io { .. } | CliError::Parse { .. } => exit::IO,
            CliError::Config(_) => exit::CONFIG,
            CliError::Core(E::InfeasibleCalibration { .. }) => exit::INFEASIBLE,
            CliError::Core(E::InstanceTooLarge(_)) => exit::GUARD,
            CliError::Core(_) => exit::CONFIG,
            CliError::Soundness(_) => exit::SOUNDNESS,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
