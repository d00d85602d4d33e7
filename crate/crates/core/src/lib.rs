pub mod cli;
pub mod data;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod sim;
pub mod tensor;
pub mod transfer;
pub mod tuning;

pub use error::{Error, Result};
