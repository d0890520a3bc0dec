//! Configuration, experiment orchestration, sweeps and validation suites.

pub mod config;
pub mod experiment;
pub mod sweep;
pub mod validate;
