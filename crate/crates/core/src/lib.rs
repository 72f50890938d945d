//! Switched linear power-system models with observer-based closed loops,
//! contingency classification from log-error features, and scenario
//! identification by residual matching.

pub mod classifier;
pub mod closed_loop;
pub mod error;
pub mod features;
pub mod grid_model;
pub mod harness;
pub mod identifier;
pub mod linalg;
pub mod scenarios;
pub mod simulator;

pub use error::{Error, Result};
