//! Command-line front end: configuration, CSV output and the experiment
//! commands behind the `apmc` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, Outcome};
pub use config::RunConfig;
pub use error::CliError;
