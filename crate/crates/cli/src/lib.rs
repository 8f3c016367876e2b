//! Scenario files, batch runs and plot data for `sphs-core`.

pub mod bundled;
pub mod error;
pub mod plot;
pub mod run;
pub mod scenario;

pub use error::CliError;
pub use run::{apply_overrides, run_scenario, Overrides, RunSummary};
pub use scenario::{parse_scenario, parse_str, to_toml, Scenario};
