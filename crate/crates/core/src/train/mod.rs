//! Model variants, the training loop, metrics and model files.

mod artifact;
mod metrics;
mod model;
mod optim;
mod trainer;

pub use artifact::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use metrics::MetricsReport;
pub use model::{Activations, Arch, Layer, Model, ModelSpec, Param, Variant, FEATURE_TAGS};
pub use optim::{AdamConfig, OptimizerState};
pub use trainer::{count_params, evaluate, predict_all, train, train_epoch, EpochLog, TrainConfig};
