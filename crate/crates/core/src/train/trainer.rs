use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, DatasetSplit, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::softmax_cross_entropy;
use crate::tensor::Scalar;

use super::metrics::MetricsReport;
use super::model::Model;
use super::optim::{AdamConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Batch size for the per-epoch test evaluation.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            eval_batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_loss={:.6} test_accuracy={:.6} wall_s={:.2}",
            self.epoch, self.train_loss, self.test_accuracy, self.wall_seconds
        )
    }
}

// Independent streams for shuffling and for dropout / pooling draws.
fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64)
}

/// One pass over `data`, returning the loss of every batch in order.
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut OptimizerState<T>,
    data: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    layer_rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let groups = data.batch_indices(batch_size, true, shuffle_seed(seed, epoch))?;
    let mut losses = Vec::with_capacity(groups.len());
    for g in groups {
        let batch = data.batch::<T>(&g)?;
        let bound = model.bind(true)?;
        let act = model.forward(&bound, &batch.images, true, layer_rng)?;
        let loss = softmax_cross_entropy(&act.logits, &batch.labels)?;
        let value = loss.item()?.to_f64().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, loss: value });
        }
        loss.backward()?;
        let grads: Vec<_> = bound.iter().map(|t| t.grad()).collect();
        opt.step(&mut model.params, &grads)?;
        losses.push(value);
    }
    Ok(losses)
}

/// Trains with Adam, evaluating on the test split after every epoch.
///
/// Deterministic for a fixed seed. `on_epoch` sees each log entry as soon
/// as it is produced.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    split: &DatasetSplit,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let mut opt = OptimizerState::new(config.adam, &model.params);
    let mut layer_rng = ChaCha8Rng::seed_from_u64(config.seed);
    layer_rng.set_stream(1);
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let losses = train_epoch(model, &mut opt, &split.train, config.batch_size, config.seed, epoch, &mut layer_rng)?;
        // Weight by batch length so a short final batch counts proportionally.
        let sizes = split.train.batch_indices(config.batch_size, false, 0)?;
        let total: f64 = losses.iter().zip(&sizes).map(|(l, g)| l * g.len() as f64).sum();
        let train_loss = total / split.train.len() as f64;
        let report = evaluate(model, &split.test, config.eval_batch_size)?;
        let log = EpochLog {
            epoch,
            train_loss,
            test_accuracy: report.accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Inference-mode predictions for every example, in dataset order.
pub fn predict_all<T: Scalar>(model: &Model<T>, data: &Dataset, batch_size: usize) -> Result<Vec<usize>> {
    let groups = data.batch_indices(batch_size, false, 0)?;
    let parts = groups
        .par_iter()
        .map(|g| model.predict(&data.batch::<T>(g)?.images))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset, batch_size: usize) -> Result<MetricsReport> {
    let predicted = predict_all(model, data, batch_size)?;
    let labels: Vec<usize> = data.labels.iter().map(|&l| l as usize).collect();
    MetricsReport::from_predictions(&predicted, &labels, NUM_CLASSES, model.param_count())
}

pub fn count_params<T: Scalar>(model: &Model<T>) -> usize {
    model.param_count()
}
