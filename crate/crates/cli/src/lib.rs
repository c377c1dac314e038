//! Harness library behind the `metamap` binary: config loading, training
//! orchestration, evaluation protocols, representation analysis, and
//! reporting.

pub mod analyze;
pub mod config_file;
pub mod evalcmd;
pub mod report;
pub mod runner;
