//! Command-line pipeline and review HTTP service for the screening engine.

pub mod api;
pub mod cli;
pub mod config;
pub mod report;
