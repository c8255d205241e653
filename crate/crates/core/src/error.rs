use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("spectral radius estimation failed after {attempts} attempts: {reason}")]
    SpectralRadius { attempts: usize, reason: String },

    #[error("gain {value} at unit {unit} is below the floor {floor}")]
    GainBelowFloor { unit: usize, value: f64, floor: f64 },

    #[error("intrinsic plasticity diverged at round {round:?}, epoch {epoch}, batch {batch}")]
    Diverged {
        round: Option<u32>,
        epoch: usize,
        batch: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("linear solve failed: system not positive definite (condition estimate {condition:e})")]
    Solve { condition: f64 },

    #[error("{path}:{line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("malformed frame: {0}")]
    Wire(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("client {client} failed in round {round}: {message}")]
    ClientFailed {
        client: u32,
        round: u32,
        message: String,
    },

    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
