//! Experiment runner for the commsim simulator: config files, repeated and
//! swept runs, CSV output, and self-check suites.

pub mod config;
pub mod estimate;
pub mod exec;
pub mod problem;
pub mod verify;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use exec::{cmd_run, cmd_sweep, Axis};
