use thiserror::Error;

use crate::battery::Energy;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// One or more hard configuration errors; the run is refused.
    #[error("configuration rejected: {}", .0.join("; "))]
    ConfigRejected(Vec<String>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("insufficient energy: need {need}, have {available}")]
    InsufficientEnergy { need: Energy, available: Energy },

    /// A local iterate left the finite range, usually a learning rate set too high.
    #[error("local training diverged for client {client} at step {step}")]
    Divergence { client: usize, step: usize },

    #[error("run diverged in epoch {epoch} (client {client})")]
    RunDiverged { epoch: u64, client: usize },

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
