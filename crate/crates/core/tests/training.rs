mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sift_cnn::data::{Dataset, DatasetName, DatasetSplit};
use sift_cnn::train::{
    evaluate, predict_all, train, train_epoch, AdamConfig, MetricsReport, Model, OptimizerState, TrainConfig,
};
use sift_cnn::Error;

fn split(train: Dataset, test: Dataset) -> DatasetSplit {
    DatasetSplit { name: DatasetName::Fashion, train, test }
}

fn two_class(per_class: usize, seed: u64) -> Dataset {
    let all = synthetic_dataset(per_class, seed);
    let keep: Vec<usize> = (0..all.len()).filter(|&i| all.labels[i] < 2).collect();
    all.select(&keep)
}

#[test]
fn separable_two_class_set_is_learned() {
    let data = two_class(20, 1);
    let mut model = Model::<f32>::build("fashion-baseline".parse().unwrap(), 0);
    let mut opt = OptimizerState::new(AdamConfig::default(), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut reached = None;
    for epoch in 1..=50 {
        train_epoch(&mut model, &mut opt, &data, 8, 0, epoch, &mut rng).unwrap();
        if evaluate(&model, &data, 64).unwrap().accuracy >= 0.99 {
            reached = Some(epoch);
            break;
        }
    }
    assert!(reached.is_some(), "train accuracy stayed below 99% for 50 epochs");
}

#[test]
fn identical_seeds_give_identical_logs() {
    let s = split(synthetic_dataset(4, 2), synthetic_dataset(2, 3));
    let cfg = TrainConfig { epochs: 2, batch_size: 8, seed: 9, ..TrainConfig::default() };
    for v in ["fashion-sift", "fashion-baseline(mixed)", "fashion-baseline(stochastic)"] {
        let run = || {
            let mut m = Model::<f32>::build(v.parse().unwrap(), 9);
            let logs = train(&mut m, &s, &cfg, |_| {}).unwrap();
            let key: Vec<(f64, f64)> = logs.iter().map(|l| (l.train_loss, l.test_accuracy)).collect();
            (key, m)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b, "{v}");
        assert_eq!(ma, mb, "{v}");
    }
}

#[test]
fn log_lines_are_key_value() {
    let s = split(synthetic_dataset(2, 4), synthetic_dataset(1, 5));
    let mut m = Model::<f32>::build("fashion-baseline".parse().unwrap(), 0);
    let mut lines = Vec::new();
    let cfg = TrainConfig { epochs: 2, batch_size: 16, ..TrainConfig::default() };
    train(&mut m, &s, &cfg, |l| lines.push(l.to_string())).unwrap();
    assert_eq!(lines.len(), 2);
    for (i, line) in lines.iter().enumerate() {
        let keys: Vec<&str> = line.split(' ').map(|kv| kv.split_once('=').unwrap().0).collect();
        assert_eq!(keys, ["epoch", "train_loss", "test_accuracy", "wall_s"]);
        assert!(line.starts_with(&format!("epoch={} ", i + 1)));
    }
}

#[test]
fn evaluation_ignores_batch_size() {
    let data = synthetic_dataset(3, 6);
    for v in ["fashion-sift", "fashion-baseline(stochastic)", "mnist-hybrid"] {
        let m = Model::<f32>::build(v.parse().unwrap(), 1);
        let reference = predict_all(&m, &data, 30).unwrap();
        for b in [1, 7, 64] {
            assert_eq!(predict_all(&m, &data, b).unwrap(), reference, "{v} batch {b}");
        }
        assert_eq!(evaluate(&m, &data, 4).unwrap(), evaluate(&m, &data, 30).unwrap());
    }
}

#[test]
fn first_epoch_lowers_loss_for_every_variant() {
    let data = synthetic_dataset(100, 7);
    for v in [
        "mnist-baseline(max)",
        "mnist-sift",
        "mnist-hybrid",
        "fashion-baseline(max)",
        "fashion-baseline(avg)",
        "fashion-baseline(mixed)",
        "fashion-baseline(stochastic)",
        "fashion-sift",
        "fashion-hybrid",
    ] {
        let mut m = Model::<f32>::build(v.parse().unwrap(), 0);
        let mut opt = OptimizerState::new(AdamConfig::default(), &m.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let losses = train_epoch(&mut m, &mut opt, &data, 64, 0, 1, &mut rng).unwrap();
        let head: f64 = losses[..3].iter().sum::<f64>() / 3.0;
        let tail: f64 = losses[losses.len() - 3..].iter().sum::<f64>() / 3.0;
        assert!(tail < head, "{v}: {head} -> {tail}");
    }
}

#[test]
fn nan_loss_reports_divergence() {
    let s = split(synthetic_dataset(4, 8), synthetic_dataset(1, 9));
    let mut m = Model::<f32>::build("fashion-baseline".parse().unwrap(), 0);
    let out_bias = m.params.iter_mut().find(|p| p.name == "out.bias").unwrap();
    out_bias.data[3] = f32::NAN;
    let cfg = TrainConfig { epochs: 3, batch_size: 8, ..TrainConfig::default() };
    match train(&mut m, &s, &cfg, |_| {}) {
        Err(Error::Divergence { epoch, loss }) => {
            assert_eq!(epoch, 1);
            assert!(loss.is_nan());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn zero_learning_rate_leaves_model_unchanged() {
    let s = split(synthetic_dataset(2, 10), synthetic_dataset(1, 11));
    let mut m = Model::<f32>::build("fashion-sift".parse().unwrap(), 3);
    let before = m.clone();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 5,
        adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    train(&mut m, &s, &cfg, |_| {}).unwrap();
    assert_eq!(m, before);
}

/// Per-class counts by scanning the pairs directly, no confusion matrix.
fn brute_force(pred: &[usize], labels: &[usize]) -> (f64, f64, f64) {
    let mut precision_sum = 0.0;
    let mut f1_sum = 0.0;
    for c in 0..10 {
        let tp = pred.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count();
        let fp = pred.iter().zip(labels).filter(|&(&p, &l)| p == c && l != c).count();
        let fn_ = pred.iter().zip(labels).filter(|&(&p, &l)| p != c && l == c).count();
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        precision_sum += precision;
        if precision + recall > 0.0 {
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    (correct as f64 / pred.len() as f64, precision_sum / 10.0, f1_sum / 10.0)
}

#[test]
fn metrics_match_brute_force() {
    let mut r = rng(12);
    for trial in 0..20 {
        let n = 1 + r.random_range(0..500);
        // skewed predictions leave some classes never predicted
        let classes = if trial % 3 == 0 { 4 } else { 10 };
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..10)).collect();
        let pred: Vec<usize> = labels
            .iter()
            .map(|&l| if r.random_bool(0.6) { l } else { r.random_range(0..classes) })
            .collect();
        let report = MetricsReport::from_predictions(&pred, &labels, 10, 0).unwrap();
        let (acc, prec, f1) = brute_force(&pred, &labels);
        assert_eq!((report.accuracy, report.macro_precision, report.macro_f1), (acc, prec, f1));
        let totals = report.class_totals();
        for c in 0..10 {
            assert_eq!(totals[c], labels.iter().filter(|&&l| l == c).count() as u64);
        }
    }
}
