use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the laboratory's numerical and bookkeeping operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("parameter shape mismatch in layer {layer}")]
    ShapeMismatch { layer: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("invalid action {action} for an action space of size {n_actions}")]
    InvalidAction { action: usize, n_actions: usize },

    #[error("invalid state index {state} for an MDP with {n_states} states")]
    InvalidState { state: usize, n_states: usize },

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("cannot step a terminal state")]
    TerminalStep,

    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: &'static str, reason: String },

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("insufficient history: need {needed} episodes, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Failures when decoding an `AGEQ` checkpoint.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
