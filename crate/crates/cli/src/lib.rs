//! File formats, configuration and subcommands of the `parallax` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
