//! Simulation core for distributed first-order methods whose server and
//! workers exchange compressed vectors.

pub mod algorithms;
pub mod compressors;
pub mod error;
pub mod problems;
pub mod rng;
pub mod telemetry;
pub mod tuning;

pub use error::{Error, Result};
