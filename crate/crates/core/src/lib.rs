pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod nn;
mod svg;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
