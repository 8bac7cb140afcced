//! Command-line front end for `mmdfit`: CSV ingestion, fit summaries, JSON
//! artifacts and the seeded experiment harness.

pub mod args;
pub mod baseline;
pub mod data;
pub mod error;
pub mod experiment;
pub mod report;
pub mod run;

pub use args::Cli;
pub use error::{CliError, Result};
pub use run::{run, RunOutput};
