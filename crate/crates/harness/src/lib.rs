//! Experiment plumbing for the `nnrl` agents: TOML configs, seeded runs
//! written as CSV, and the analyses run over a results directory.

pub mod analysis;
pub mod config;
pub mod error;
pub mod report;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::HarnessError;
