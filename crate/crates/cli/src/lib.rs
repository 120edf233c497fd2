//! Command-line front end for component network meta-analysis: table
//! ingestion, run configuration, fitting, ranking, simulation and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod tables;

pub use error::{CliError, Result};
