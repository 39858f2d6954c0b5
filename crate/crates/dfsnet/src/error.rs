use std::path::PathBuf;

use dfsnet_core::logical::LogicalError;
use dfsnet_core::network::NetworkError;
use dfsnet_core::noise_timing::NoiseError;
use dfsnet_core::oracle::OracleError;
use dfsnet_core::protocols::ProtocolError;
use dfsnet_core::qstate::StateError;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const PHYSICS: u8 = 3;
    pub const CHECK_FAILED: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("simulation failed: {0}")]
    Physics(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => exit::IO,
            CliError::Parse { .. } | CliError::Config(_) => exit::CONFIG,
            CliError::Physics(_) => exit::PHYSICS,
            CliError::CheckFailed(_) => exit::CHECK_FAILED,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

macro_rules! physics_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Physics(e.to_string())
            }
        }
    )*};
}

physics_from!(ProtocolError, NetworkError, NoiseError, LogicalError, OracleError, StateError);
