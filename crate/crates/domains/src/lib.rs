//! Experimental task domains and their exact oracles.
//!
//! Three desk-scale domains: degree-2 polynomial regression in four
//! variables, two-suit card games with enumerated expected values, and a
//! pick-up / push-off gridworld. Everything here is pure and model-free;
//! learning lives elsewhere.

pub mod cards;
pub mod grid;
pub mod poly;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("mapping not applicable: {0}")]
    Applicability(String),
}
