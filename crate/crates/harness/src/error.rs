//! Harness error type.

use thiserror::Error;

use nnrl::envs::EnvError;
use nnrl::error::AgentError;
use nnrl::metric_space::GeometryError;
use nnrl::neural::NeuralError;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// `path` is the dotted key path inside the config file.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Analysis(String),
}
