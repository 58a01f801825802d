//! Scenario configuration, pipeline execution and report emission.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{builtin, resolve, ScenarioConfig, Stage, BUILTIN_SCENARIOS};
pub use pipeline::{run_scenario, run_scenario_with, RunOptions, ScenarioRun};
pub use report::{emit, Format, ResidualReport};
