//! Simulator for distributed goodness-of-fit testing under bandwidth and local
//! privacy constraints, with an exact finite laboratory for the equivalence
//! arguments behind the rate results.

pub mod channels;
pub mod cli;
pub mod equivalence_lab;
pub mod error;
pub mod exec;
pub mod models;
pub mod numerics;
pub mod protocols;
pub mod risk_lab;
pub mod rng;
pub mod transforms;

pub use error::{Error, Result};
