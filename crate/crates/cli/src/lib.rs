//! Configuration, dispatch and CSV output for the `wz-lab` binary.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{parse_config, ConfigError, Experiment, ExperimentConfig, ModelSpec};
pub use output::{config_hash, Gate, RunManifest, Table};
pub use runner::{execute, run, Outcome};
