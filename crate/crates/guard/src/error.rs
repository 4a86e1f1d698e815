use std::io;
use std::path::PathBuf;

use guard_core::model::ValidationError;
use guard_core::policy::PolicyError;
use guard_core::sim::ConfigError;
use guard_core::triage::TriageError;
use guard_core::window::IngestError;
use thiserror::Error;

use crate::wire::WireError;

#[derive(Debug, Error)]
pub enum GuardError {
    #[error("config {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error(transparent)]
    Scenario(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Triage(#[from] TriageError),
    #[error("trace {path}: {reason}")]
    Trace { path: PathBuf, reason: String },
    #[error("evaluation failed: {0}")]
    Eval(String),
}

impl GuardError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        GuardError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for evaluation failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            GuardError::Eval(_) | GuardError::Trace { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = GuardError> = std::result::Result<T, E>;
