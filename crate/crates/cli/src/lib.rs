//! Experiment layer for massfront: configuration, preset runners, ensemble
//! orchestration, CSV records with JSON sidecars, bit-exact snapshots and
//! gnuplot script emission.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod hexfloat;
pub mod plot;
pub mod records;
pub mod snapshot;
pub mod summary;

pub use config::{parse_config, ConfigError, ExperimentConfig, Preset};
pub use experiment::{run_experiment, ExperimentOutput, RunOptions};
pub use summary::Summary;
