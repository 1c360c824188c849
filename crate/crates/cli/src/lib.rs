//! Command-line runner and HTTP service for the mission engine.

pub mod commands;
pub mod server;
