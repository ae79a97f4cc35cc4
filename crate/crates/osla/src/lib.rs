//! Online sparse linear approximation.
//!
//! A learner predicts a K-sparse coefficient vector before each measurement
//! arrives and pays the squared approximation error against a fixed sensing
//! matrix. This crate implements the follow-the-approximate-sparse-leader
//! meta-policy (agile and lazy variants) on top of greedy sparse solvers
//! (IHT and HTP), the soft-thresholding baseline, exact small-instance
//! oracles, regret decomposition and bound evaluators, and a seeded
//! experiment harness with a CLI.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod policies;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
