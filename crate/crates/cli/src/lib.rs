//! Scenario loading, run orchestration and diagnostics for `ccflow`.

pub mod diagnose;
pub mod error;
pub mod random;
pub mod run;
pub mod scenario;

pub use error::{CliError, Issue};
pub use scenario::{load_scenario, ScenarioFile};
