//! Command-line front end for `asgfit`.

pub mod args;
pub mod commands;
pub mod manifest;

pub use args::{Cli, Command};
pub use commands::{exit_code, run};
