//! Command-line harness for mean-variance TD evaluation and the SPSA actor-critic.

pub mod commands;
pub mod config;
pub mod error;
pub mod instances;
pub mod manifest;
pub mod suites;
