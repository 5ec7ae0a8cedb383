//! Experiment harness: configuration, deterministic seeding, persistence,
//! and the CLI command implementations.

pub mod commands;
pub mod config;
pub mod records;
pub mod rng;
