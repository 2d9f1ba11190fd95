//! Scenario language, runner, oracles, fuzzing and metric comparison.

pub mod fuzz;
pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod scenario;

pub use oracle::check_serializable;
pub use runner::{run, run_world, RunOptions, RunReport};
pub use scenario::{parse, Scenario, ScenarioError};
