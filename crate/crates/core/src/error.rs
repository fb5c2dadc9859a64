//! Error type shared by the agents.

use thiserror::Error;

use crate::envs::EnvError;
use crate::metric_space::GeometryError;
use crate::neural::NeuralError;
use crate::nn_index::IndexError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reward {0} outside [0, 1]")]
    RewardRange(f64),
    /// Training produced a non-finite value; `checkpoint` holds the network
    /// parameters (checkpoint CSV) from just before the failing update.
    #[error("non-finite value at step {step}: {what}")]
    Diverged {
        step: usize,
        what: String,
        checkpoint: String,
    },
}
