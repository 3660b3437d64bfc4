//! Command-line adapters and HTTP service for the cohortflow projection engine.

pub mod commands;
pub mod error;
pub mod server;
