//! Deterministic desk-scale simulator for split federated learning.
//!
//! The crate implements step-wise momentum fusion with staleness-weighted
//! history (SMoFi) alongside FedAvg, SFLV1, and SFLV2 baselines, a Dirichlet
//! non-IID partitioner, a wall-clock latency model for heterogeneous
//! clients, and a seeded experiment harness with CSV/JSON output.

pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod protocols;
pub mod seeds;
pub mod split;
pub mod system;

pub use error::{Error, Result};
