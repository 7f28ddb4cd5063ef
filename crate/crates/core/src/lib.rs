//! Class-incremental learning laboratory built around brain-inspired generative
//! replay: one variational autoencoder doubles as classifier and generator, with a
//! class-conditional Gaussian-mixture prior, per-task context gates, replay of
//! hidden representations, soft-target distillation and Synaptic Intelligence.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod runner;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
