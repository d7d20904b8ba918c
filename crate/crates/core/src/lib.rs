//! Simulation of Q-learning resource-block allocation for RAN slicing under
//! learned jamming, with benchmark attacks, defenses and recovery metrics.

pub mod adversary;
pub mod config;
pub mod defense;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod gnb;
pub mod metrics;
pub mod qlearn;
pub mod slicing;

pub use error::{Error, Result};
