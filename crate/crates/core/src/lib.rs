//! DPS-Net: deformable point sampling for camouflaged object detection.

pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Activation, Gradients, ReduceKind, Scalar, Tape, Tensor, Var};
