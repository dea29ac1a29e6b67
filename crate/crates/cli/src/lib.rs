//! Library surface of the `levex` command-line tool: configuration parsing,
//! the workflow implementations and the on-disk formats.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod manifest;
