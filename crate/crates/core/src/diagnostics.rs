//! Finite-difference gradient checks over every layer kind.
//!
//! Each case evaluates `sum(layer(inputs) ⊙ R)` for a fixed random `R` in
//! double precision at a point where the layer is differentiable: relu and
//! max-pool inputs are kept away from their kinks and ties, stochastic-pool
//! inputs are positive, descriptor patches pass [`genericity`].

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{self, PoolKind, PoolSpec};
use crate::sift::{genericity, sift_layer, DescriptorConfig};
use crate::tensor::{gradcheck, Tensor};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

type CaseFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + Send + Sync>;

pub struct GradcheckCase {
    pub layer: String,
    pub inputs: Vec<Tensor<f64>>,
    pub f: CaseFn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub layer: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl GradcheckCase {
    pub fn new(
        layer: impl Into<String>,
        inputs: Vec<Tensor<f64>>,
        f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + Send + Sync + 'static,
    ) -> Self {
        GradcheckCase { layer: layer.into(), inputs, f: Box::new(f) }
    }

    pub fn run(&self) -> Result<GradcheckRow> {
        let report = gradcheck(&self.f, &self.inputs, EPS, TOLERANCE)?;
        Ok(GradcheckRow {
            layer: self.layer.clone(),
            max_rel_err: report.worst(),
            passed: report.passed(),
        })
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape).expect("shape matches")
}

/// Values with magnitude in `[0.1, 1)` and random sign.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(data, shape).expect("shape matches")
}

/// Distinct positive values at least 0.01 apart, so no window has a tie.
fn tie_free(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let data = ranks
        .into_iter()
        .map(|r| 0.1 + 0.02 * r as f64 + rng.random_range(0.0..0.005))
        .collect();
    Tensor::new(data, shape).expect("shape matches")
}

fn generic_patches(rng: &mut ChaCha8Rng, count: usize, cfg: &DescriptorConfig) -> Result<Tensor<f64>> {
    let p = cfg.patch;
    let mut data = Vec::with_capacity(count * p * p);
    while data.len() < count * p * p {
        let candidate = uniform(rng, &[1, p, p], 0.0, 1.0);
        if genericity(&candidate, cfg)?.is_generic() {
            data.extend_from_slice(candidate.data());
        }
    }
    Tensor::new(data, &[1, count, p, p])
}

/// `sum(y ⊙ r)` with `r` fixed by `seed`.
fn project(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = uniform(&mut rng, y.shape(), -1.0, 1.0);
    Ok(y.mul(&r)?.sum())
}

fn pool_case(kind: PoolKind, input: Tensor<f64>, seed: u64) -> GradcheckCase {
    GradcheckCase::new(format!("pool2d_{kind}"), vec![input], move |v| {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        project(&nn::pool2d(&v[0], &PoolSpec::new(kind), false, &mut unused)?, seed)
    })
}

/// One case per layer kind used by the models.
pub fn standard_cases(seed: u64) -> Result<Vec<GradcheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = seed;
    let mut cases = vec![
        GradcheckCase::new(
            "conv2d",
            vec![uniform(&mut rng, &[2, 2, 6, 5], -1.0, 1.0), uniform(&mut rng, &[3, 2, 3, 3], -1.0, 1.0), uniform(&mut rng, &[3], -1.0, 1.0)],
            move |v| project(&nn::conv2d(&v[0], &v[1], &v[2])?, s),
        ),
        GradcheckCase::new(
            "dense",
            vec![uniform(&mut rng, &[4, 6], -1.0, 1.0), uniform(&mut rng, &[6, 5], -1.0, 1.0), uniform(&mut rng, &[5], -1.0, 1.0)],
            move |v| project(&nn::dense(&v[0], &v[1], &v[2])?, s),
        ),
        GradcheckCase::new("relu", vec![off_kink(&mut rng, &[3, 7])], move |v| project(&nn::relu(&v[0]), s)),
        GradcheckCase::new("softmax_cross_entropy", vec![uniform(&mut rng, &[5, 10], -3.0, 3.0)], |v| {
            nn::softmax_cross_entropy(&v[0], &[3, 0, 9, 9, 4])
        }),
    ];
    for kind in PoolKind::ALL {
        cases.push(pool_case(kind, tie_free(&mut rng, &[2, 2, 4, 6]), s));
    }
    let cfg = DescriptorConfig::new(16)?;
    cases.push(GradcheckCase::new("sift_descriptor", vec![generic_patches(&mut rng, 2, &cfg)?], move |v| {
        project(&sift_layer(&v[0], &cfg)?, s)
    }));
    Ok(cases)
}

pub fn run_cases(cases: &[GradcheckCase]) -> Result<Vec<GradcheckRow>> {
    cases.iter().map(GradcheckCase::run).collect()
}

/// Rows for every layer kind at the default seed.
pub fn gradcheck_suite() -> Result<Vec<GradcheckRow>> {
    run_cases(&standard_cases(0)?)
}

pub fn format_table(rows: &[GradcheckRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>14}  status", "layer", "max_rel_err");
    for r in rows {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{:<24} {:>14.3e}  {status}", r.layer, r.max_rel_err);
    }
    out
}
