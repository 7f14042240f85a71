use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{BackwardFn, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Average,
    /// Per forward pass, one Bernoulli draw picks max or average for the
    /// whole layer; inference uses the mixture mean.
    Mixed,
    /// Samples one activation per window with probability proportional to
    /// its value; inference uses the probability-weighted sum.
    Stochastic,
}

impl PoolKind {
    pub const ALL: [PoolKind; 4] = [
        PoolKind::Max,
        PoolKind::Average,
        PoolKind::Mixed,
        PoolKind::Stochastic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolKind::Max => "max",
            PoolKind::Average => "avg",
            PoolKind::Mixed => "mixed",
            PoolKind::Stochastic => "stochastic",
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolKind::Max),
            "avg" | "average" => Ok(PoolKind::Average),
            "mixed" => Ok(PoolKind::Mixed),
            "stochastic" => Ok(PoolKind::Stochastic),
            other => Err(Error::contract(format!("unknown pooling kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub window: usize,
    pub stride: usize,
    /// Probability of choosing max in mixed pooling.
    pub mix_prob: f64,
}

impl PoolSpec {
    pub fn new(kind: PoolKind) -> Self {
        PoolSpec {
            kind,
            window: 2,
            stride: 2,
            mix_prob: 0.5,
        }
    }
}

/// Non-overlapping pooling of a `[B×C×H×W]` tensor.
///
/// Max-pool ties go to the first element in row-major order. `rng` is only
/// consulted for mixed and stochastic pooling in training mode.
pub fn pool2d<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    spec: &PoolSpec,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let &[b, c, h, w] = input.shape() else {
        return Err(Error::shape(format!("pool2d input must be rank 4, got {:?}", input.shape())));
    };
    let k = spec.window;
    if k == 0 || spec.stride != k {
        return Err(Error::contract("pool2d supports non-overlapping windows only"));
    }
    if h % k != 0 || w % k != 0 {
        return Err(Error::shape(format!("pool2d: {h}×{w} not divisible by window {k}")));
    }
    let x = input.data();
    if spec.kind == PoolKind::Stochastic && x.iter().any(|&v| v < T::zero()) {
        return Err(Error::contract("stochastic pooling requires non-negative input"));
    }

    // Mixed pooling draws once per call; `mix` is the weight on the max term.
    let mix = match (spec.kind, training) {
        (PoolKind::Max, _) => 1.0,
        (PoolKind::Average, _) => 0.0,
        (PoolKind::Mixed, true) => {
            if rng.random_bool(spec.mix_prob) {
                1.0
            } else {
                0.0
            }
        }
        (PoolKind::Mixed, false) => spec.mix_prob,
        (PoolKind::Stochastic, _) => 0.0,
    };
    let mix = T::from_f64_lossy(mix);

    let (oh, ow) = (h / k, w / k);
    let n = k * k;
    let windows = b * c * oh * ow;
    let mut out = Vec::with_capacity(windows);
    // For each window, the flat input index and local derivative of each member.
    let mut members = Vec::with_capacity(windows * n);
    let mut coef = Vec::with_capacity(windows * n);
    let inv_n = T::one() / T::from_usize(n).expect("window size");
    let mut vals = vec![T::zero(); n];
    let mut idx = vec![0usize; n];

    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                for dy in 0..k {
                    for dx in 0..k {
                        let i = base + (oy * k + dy) * w + ox * k + dx;
                        idx[dy * k + dx] = i;
                        vals[dy * k + dx] = x[i];
                    }
                }
                members.extend_from_slice(&idx);
                let start = coef.len();
                coef.resize(start + n, T::zero());
                let local = &mut coef[start..];

                if spec.kind == PoolKind::Stochastic {
                    let total: T = vals.iter().copied().sum();
                    if total <= T::zero() {
                        out.push(T::zero());
                    } else if training {
                        let pick = sample_index(&vals, total, rng);
                        out.push(vals[pick]);
                        local[pick] = T::one();
                    } else {
                        let sq: T = vals.iter().map(|&v| v * v).sum();
                        out.push(sq / total);
                        for (d, &v) in local.iter_mut().zip(&vals) {
                            *d = (v + v) / total - sq / (total * total);
                        }
                    }
                    continue;
                }

                let mut arg = 0;
                for j in 1..n {
                    if vals[j] > vals[arg] {
                        arg = j;
                    }
                }
                let mean = vals.iter().copied().sum::<T>() * inv_n;
                let avg_w = T::one() - mix;
                out.push(mix * vals[arg] + avg_w * mean);
                for d in local.iter_mut() {
                    *d = avg_w * inv_n;
                }
                local[arg] = local[arg] + mix;
            }
        }
    }

    let len = input.numel();
    let backward: BackwardFn<T> = Box::new(move |g, _| {
        let mut gi = vec![T::zero(); len];
        for (win, &gv) in g.iter().enumerate() {
            let s = win * n;
            for (&i, &d) in members[s..s + n].iter().zip(&coef[s..s + n]) {
                gi[i] = gi[i] + gv * d;
            }
        }
        vec![Some(gi)]
    });
    Tensor::from_op("pool2d", out, &[b, c, oh, ow], vec![input.clone()], backward)
}

fn sample_index<T: Scalar, R: Rng + ?Sized>(vals: &[T], total: T, rng: &mut R) -> usize {
    let u = T::from_f64_lossy(rng.random::<f64>()) * total;
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v > T::zero() {
            last_positive = i;
            acc = acc + v;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn window(vals: [f64; 4]) -> Tensor<f64> {
        Tensor::new(vals.to_vec(), &[1, 1, 2, 2]).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn max_routes_gradient_to_argmax() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let y = pool2d(&x, &PoolSpec::new(PoolKind::Max), true, &mut rng()).unwrap();
        assert_eq!(y.data(), &[4.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn max_tie_goes_to_first() {
        let x = Tensor::param(vec![3.0, 1.0, 3.0, 3.0], &[1, 1, 2, 2]).unwrap();
        let y = pool2d(&x, &PoolSpec::new(PoolKind::Max), false, &mut rng()).unwrap();
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn average() {
        let y = pool2d(&window([1.0, 2.0, 3.0, 4.0]), &PoolSpec::new(PoolKind::Average), true, &mut rng())
            .unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn mixed_inference_is_mixture_mean() {
        let y = pool2d(&window([1.0, 2.0, 3.0, 4.0]), &PoolSpec::new(PoolKind::Mixed), false, &mut rng())
            .unwrap();
        assert_eq!(y.data(), &[0.5 * (4.0 + 2.5)]);
    }

    #[test]
    fn mixed_training_is_layer_wide() {
        let x = Tensor::new((0..64).map(|v| (v * 7 % 13) as f64).collect(), &[1, 4, 4, 4]).unwrap();
        let max = pool2d(&x, &PoolSpec::new(PoolKind::Max), false, &mut rng()).unwrap();
        let avg = pool2d(&x, &PoolSpec::new(PoolKind::Average), false, &mut rng()).unwrap();
        let mut r = rng();
        let (mut saw_max, mut saw_avg) = (false, false);
        for _ in 0..32 {
            let y = pool2d(&x, &PoolSpec::new(PoolKind::Mixed), true, &mut r).unwrap();
            if y.data() == max.data() {
                saw_max = true;
            } else {
                assert_eq!(y.data(), avg.data());
                saw_avg = true;
            }
        }
        assert!(saw_max && saw_avg);
    }

    #[test]
    fn stochastic_inference_uniform_window() {
        let y = pool2d(&window([1.0; 4]), &PoolSpec::new(PoolKind::Stochastic), false, &mut rng()).unwrap();
        assert_eq!(y.data(), &[1.0]);
    }

    #[test]
    fn stochastic_zero_window() {
        for training in [true, false] {
            let y = pool2d(&window([0.0; 4]), &PoolSpec::new(PoolKind::Stochastic), training, &mut rng())
                .unwrap();
            assert_eq!(y.data(), &[0.0]);
        }
    }

    #[test]
    fn stochastic_training_samples_proportionally() {
        let x = window([1.0, 0.0, 3.0, 0.0]);
        let mut r = rng();
        let mut hits = 0;
        let trials = 20_000;
        for _ in 0..trials {
            let y = pool2d(&x, &PoolSpec::new(PoolKind::Stochastic), true, &mut r).unwrap();
            match y.data()[0] {
                v if v == 3.0 => hits += 1,
                v => assert_eq!(v, 1.0),
            }
        }
        let frac = hits as f64 / trials as f64;
        assert!((frac - 0.75).abs() < 0.02, "{frac}");
    }

    #[test]
    fn stochastic_rejects_negative() {
        let r = pool2d(&window([1.0, -0.5, 0.0, 2.0]), &PoolSpec::new(PoolKind::Stochastic), false, &mut rng());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 4]);
        let r = pool2d(&x, &PoolSpec::new(PoolKind::Max), false, &mut rng());
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_at_tie_free_points() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        // distinct positive values keep every window tie-free
        let mut vals: Vec<f64> = (0..2 * 3 * 4 * 6).map(|i| 0.1 + i as f64 * 0.05).collect();
        use rand::seq::SliceRandom;
        vals.shuffle(&mut r);
        let x = Tensor::new(vals, &[2, 3, 4, 6]).unwrap();
        let weights = Tensor::new(
            (0..2 * 3 * 2 * 3).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect(),
            &[2, 3, 2, 3],
        )
        .unwrap();
        for kind in PoolKind::ALL {
            let spec = PoolSpec::new(kind);
            let report = gradcheck(
                |v| Ok(pool2d(&v[0], &spec, false, &mut rng())?.mul(&weights)?.sum()),
                &[x.clone()],
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "{kind}: {report:?}");
        }
    }
}
