//! Configuration, training loop, run manifests and experiment orchestration
//! behind the `cab` command line.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod manifest;
pub mod train;

pub use commands::ModelSpec;
pub use config::{Config, ConfigError};
pub use experiment::{run_experiment, ExperimentSummary};
pub use manifest::RunManifest;
pub use train::{train, TrainConfig, TrainError, Trainer};
