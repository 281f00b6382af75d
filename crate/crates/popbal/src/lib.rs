//! Configuration, presets, run orchestration and file formats for
//! [`popbal_core`].

pub mod config;
pub mod output;
pub mod presets;
pub mod reports;
pub mod runner;

pub use popbal_core as core;

pub use config::{parse_config, parse_sweep, ConfigError, ModelConfig, ScenarioConfig, SweepConfig};
pub use runner::{run, run_sweep, RunError, RunOutcome, Summary};
