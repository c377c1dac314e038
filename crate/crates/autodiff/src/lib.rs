//! Minimal reverse-mode automatic differentiation over dense f64 arrays.
//!
//! The tape records eagerly-executed operations and replays them in exact
//! reverse order for gradients. A fresh tape is built per training step;
//! parameters persist in a [`ParamStore`] across steps and are updated by
//! [`OptimizerState`].
//!
//! Execution is single-threaded per tape. Arrays, stores, and optimizer
//! states can be moved between threads; run independent seeded experiments
//! in parallel rather than sharing one model.

pub mod array;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use array::Array;
pub use layers::{Activation, Linear, LstmCell, Mlp, RecurrentEncoder, LEAKY_SLOPE};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{LossKind, Tape, Var};
