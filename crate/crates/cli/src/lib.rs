//! Library surface of the CLI crate: run configuration, subcommand
//! implementations, and the HTTP service. The `glassguard` binary is a thin
//! argument parser over these.

pub mod commands;
pub mod config;
pub mod server;
