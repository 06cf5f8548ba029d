//! Experiment orchestration.
//!
//! A config file names a [`Mode`], the data split and the policies to
//! compare. [`run_experiment`] runs every `(seed, policy)` pair and
//! [`ExperimentOutput::write`] stores per-run traces plus a summary.

mod config;
mod experiment;
pub mod metrics;

pub use config::{
    ArqSettings, ExperimentConfig, FederatedSettings, Mode, SchedulingSettings, Theta0,
};
pub use experiment::{
    load_dataset, prepare_dataset, run_experiment, run_on_dataset, ExperimentOutput, RunResult,
    RunTrace,
};
