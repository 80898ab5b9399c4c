//! Spatial-temporal GAN for paired fluorescence microscopy channels.

pub mod autograd;
pub mod cli;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod synthetic;
pub mod tensor;
pub mod trainer;
pub mod types;

pub use error::{Result, StganError};
