//! Library side of the `shift-lab` binary: spec parsing, the deterministic
//! sweep/theory runners, and CSV reporting.

pub mod config;
pub mod error;
pub mod report;
pub mod runner;

pub use config::ExperimentSpec;
pub use error::CliError;
