//! Command line and HTTP labeling service around `erq-core`.

pub mod commands;
pub mod inputs;
pub mod server;
