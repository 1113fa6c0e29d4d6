//! Library side of the CLI: cost model, synthetic data, reports, and the
//! subcommand implementations, exposed so integration tests can drive them.

pub mod commands;
pub mod cost;
pub mod report;
pub mod synth;
