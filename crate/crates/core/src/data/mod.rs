//! IDX ingestion, batching, evaluation-time rotations and feature export.

mod dataset;
mod export;
mod idx;

pub use dataset::{rot90, Dataset, DatasetName, DatasetSplit, LabeledBatch, Rotation, NUM_CLASSES};
pub use export::{export_features, sample_per_class, EXPORT_PER_CLASS};
pub use idx::{parse_idx, read_idx_file, serialize_idx, IdxArray, MAGIC_IMAGES, MAGIC_LABELS};
