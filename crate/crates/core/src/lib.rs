//! Learned two-stage image signal processor with a from-scratch
//! reverse-mode differentiation engine.

pub mod checkpoint;
pub mod color;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
