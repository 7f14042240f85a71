//! Convolutional networks whose pooling stage can be swapped for a
//! differentiable SIFT keypoint-descriptor layer.
//!
//! - [`tensor`]: dense tensors with reverse-mode differentiation.
//! - [`nn`]: convolution, pooling variants, dense/ReLU/dropout, loss.
//! - [`sift`]: the descriptor layer.
//! - [`data`]: IDX ingestion, batching, rotations, feature export.
//! - [`train`]: model variants, Adam, metrics, model artifacts.
//! - [`diagnostics`]: finite-difference checks of every layer kind.
//! - [`config`]: run configuration for the command-line tool.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod nn;
pub mod sift;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
