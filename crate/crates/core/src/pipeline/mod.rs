//! File formats, dataset manifests, splits and experiment orchestration.

pub mod io;
pub mod manifest;
pub mod partition;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod reconstruct;

pub use config::ExperimentConfig;
pub use experiment::{aggregate, run_experiment, ExperimentReport};
