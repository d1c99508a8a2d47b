//! Command-line front end for the boundary-control laboratory: config
//! parsing and the five subcommand implementations. The binary in `main.rs`
//! is a thin dispatcher around this.

pub mod commands;
pub mod config;
