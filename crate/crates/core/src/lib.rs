//! Large-deviation shortfall rates for benchmarked portfolios.
//!
//! The crate computes the decay rate of the probability that a portfolio's
//! long-run log return relative to a stochastic benchmark falls below a
//! threshold, builds the stationary feedback portfolio that attains it, and
//! checks both by importance-sampled simulation.

pub mod bellman1d;
pub mod conditions;
pub mod dual;
pub mod error;
pub mod fixtures;
pub mod gaussian;
pub mod hamiltonian;
pub mod linalg;
pub mod model;
pub mod simulate;

pub use error::{Error, Result};
