//! Reference-based Bayesian causal model (BCM) for missing post-intercurrent-event
//! outcomes in longitudinal two-arm trials, with comparator estimators and a
//! simulation harness.

pub mod analysis;
pub mod data;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod imputation;
pub mod inference;
pub mod model;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
