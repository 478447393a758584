//! Experiment harness: configuration, runs, comparison tables and plots.

pub mod config;
mod error;
pub mod plot;
pub mod reproduce;
pub mod runner;

pub use config::{ExperimentConfig, Overrides};
pub use error::LabError;
