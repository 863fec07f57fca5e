//! Channel estimation and reconstruction for MIMO links with movable
//! antennas at both ends.
//!
//! The pipeline moves antennas over small probe areas, folds the received
//! pilots into two third-order tensors, decomposes them with CP-ALS, reads
//! path angles off the Vandermonde factors, solves for the path-response
//! matrix and evaluates the channel anywhere in the movement regions.

pub mod baselines;
pub mod channel;
pub mod codec;
pub mod config;
pub mod cp;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod linalg;
pub mod pilot;
pub mod rng;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
