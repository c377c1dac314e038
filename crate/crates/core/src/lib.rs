//! Meta-mapping learning: task representations built from examples or
//! language, executed through a hypernetwork-parameterized task network, and
//! transformed by higher-order mappings to perform novel tasks zero-shot.
//!
//! A model instance is single-threaded; run independent seeded experiments
//! in parallel rather than sharing one instance.

pub mod baselines;
pub mod cards_run;
pub mod checkpoint;
pub mod config;
pub mod engine;
pub mod grid_run;
pub mod metrics;
pub mod model;
pub mod poly_run;
pub mod stroop_run;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unknown vocabulary token: {0}")]
    Vocabulary(String),
    #[error("no persistent representation for task {0}")]
    MissingPersistent(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}
