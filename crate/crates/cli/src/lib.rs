//! Library side of the `gull` command-line tool.

pub mod commands;
pub mod error;
pub mod io;
pub mod metrics;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult, ErrorKind};
