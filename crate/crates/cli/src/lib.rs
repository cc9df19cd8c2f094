//! Command implementations behind the `defend` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
