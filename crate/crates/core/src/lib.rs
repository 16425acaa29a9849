//! Block-correlated pseudo-marginal samplers for state-space models.

pub mod crn;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod filter;
pub mod kalman;
pub mod model;
pub mod rng;
mod rows;
pub mod sampler;
pub mod sort;
pub mod stats;

pub use error::{Error, Result};
