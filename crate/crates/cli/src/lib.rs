//! Experiment harness: configuration, presets, runs, artifacts and grid
//! search for the samplers in `slocal-core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod presets;

pub use config::{Algo, ExperimentConfig, MetricKind, PartialConfig};
pub use error::{CliError, CliResult};
