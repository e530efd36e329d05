//! Part-assembly shape autoencoder: data, model, losses, metrics and the
//! staged training pipeline.

pub mod error;
pub mod voxdata;

pub use error::{Result, VoxError};
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
