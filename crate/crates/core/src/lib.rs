//! Grow fully connected networks of arbitrary DAG shape from an empty graph.

pub mod bottleneck;
pub mod cli;
pub mod data;
pub mod error;
pub mod growth;
mod linalg;
pub mod metrics;
pub mod netdag;
pub mod strategy;

pub use error::{Error, Result};
