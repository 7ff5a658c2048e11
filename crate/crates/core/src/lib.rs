//! Simulation and verification workbench for star-scale invariant
//! log-correlated fields on the circle and their (sub)critical Gaussian
//! multiplicative chaos.

// Guards like `!(x > 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod error;
pub mod field;
pub mod fourier;
pub mod gmc;
pub mod harness;
pub mod kernel;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod twopoint;

pub use error::{Error, Result};
