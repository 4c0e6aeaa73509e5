//! Federated learning with Bayesian-inference-based adaptive dropout.
//!
//! Clients train row-wise spike-and-slab variational models, adapt which
//! weight rows they keep from the trend of their local loss, accumulate
//! per-row experience scores, and upload only the kept rows. The server
//! reconstructs and averages the sparse updates. Byte counts, modelled
//! transmission time and a generalization bound are tracked per round.

pub mod config;
pub mod data;
pub mod dropout;
mod error;
pub mod exec;
pub mod federation;
pub mod nn;
pub mod rng;
pub mod strategies;
pub mod telemetry;
pub mod variational;
pub mod wire;

pub use error::{DecodeError, Error, Result};
