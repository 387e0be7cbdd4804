//! Batch experiment runner: configuration files, subcommands and report
//! files around the `coxq` library.

pub mod config;
pub mod report;
pub mod run;

pub use run::{execute, run, Command, Invocation};
