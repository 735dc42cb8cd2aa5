//! Control plane over the flowforge engine: the `flowforge` CLI commands and
//! the HTTP API.

pub mod commands;
pub mod server;
