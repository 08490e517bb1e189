//! Experiment runtime: configuration, delay injection, actors, transports,
//! the simulated and wall-clock drivers, metrics and the benchmark runner.

pub mod actor;
pub mod bench;
pub mod config;
pub mod delay;
pub mod experiment;
pub mod learner;
pub mod link;
pub mod metrics;
pub mod sim;
pub mod wall;
pub mod wire;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, RunError, RunOptions, RunReport};
