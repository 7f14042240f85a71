//! Convolution, pooling, dense, activation and loss layers.

mod conv;
mod layers;
mod pool;

pub use conv::{conv2d, ConvLayer};
pub use layers::{argmax_rows, dense, dropout, flatten, relu, softmax_cross_entropy, Dense};
pub use pool::{pool2d, PoolKind, PoolSpec};
