//! Simulator for federated optimization with local training and client
//! sampling (5GCS), plus reference baselines and an experiment harness.

pub mod algorithms;
pub mod baselines;
pub mod data_io;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod local_solvers;
pub mod objective;
pub mod sampling;

pub use error::{Error, Result};
