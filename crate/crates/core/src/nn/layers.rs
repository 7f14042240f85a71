use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{BackwardFn, Scalar, Tensor};

/// Fully connected layer: `y = x·W + b` with `W` stored `[in × out]`.
#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dense(x, &self.weight, &self.bias)
    }
}

pub fn dense<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    x.matmul(weight)?.add_row_vector(bias)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.relu()
}

/// Inverted dropout: in training, each unit survives with probability
/// `1 - rate` and survivors are scaled by `1 / (1 - rate)`. Identity
/// otherwise.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask = (0..x.numel())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    x.mul(&Tensor::new(mask, x.shape())?)
}

/// Flattens `[B × ...]` to `[B × rest]`.
pub fn flatten<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let Some(&b) = x.shape().first() else {
        return Err(Error::shape("cannot flatten a scalar"));
    };
    let rest = x.numel() / b.max(1);
    x.reshape(&[b, rest])
}

/// Mean cross-entropy of softmax(logits) against integer labels.
///
/// Uses max-subtraction for stability. The gradient is
/// `(softmax - one_hot) / B`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let &[b, k] = logits.shape() else {
        return Err(Error::shape(format!("logits must be B×K, got {:?}", logits.shape())));
    };
    if labels.len() != b {
        return Err(Error::shape(format!("{} labels for batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!("label {bad} out of range for {k} classes")));
    }
    let mut probs = vec![T::zero(); b * k];
    let mut total = T::zero();
    for (row, (z, p)) in logits.data().chunks(k).zip(probs.chunks_mut(k)).enumerate() {
        let m = z.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (pi, &zi) in p.iter_mut().zip(z) {
            *pi = (zi - m).exp();
            s = s + *pi;
        }
        p.iter_mut().for_each(|pi| *pi = *pi / s);
        total = total + (s.ln() + m - z[labels[row]]);
    }
    let bt = T::from_usize(b).expect("batch size");
    let labels = labels.to_vec();
    let backward: BackwardFn<T> = Box::new(move |g, _| {
        let scale = g[0] / bt;
        let mut gi = probs.clone();
        for (row, &l) in labels.iter().enumerate() {
            gi[row * k + l] = gi[row * k + l] - T::one();
        }
        gi.iter_mut().for_each(|v| *v = *v * scale);
        vec![Some(gi)]
    });
    Tensor::from_op("softmax_cross_entropy", vec![total / bt], &[], vec![logits.clone()], backward)
}

/// Row-wise argmax of a `[B × K]` matrix (first maximum wins).
pub fn argmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Vec<usize>> {
    let &[_, k] = x.shape() else {
        return Err(Error::shape(format!("argmax_rows needs a matrix, got {:?}", x.shape())));
    };
    Ok(x.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_definition() {
        let x = Tensor::param(vec![-1.0, 0.0, 2.0], &[3]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::<f64>::zeros(&[3, 10]);
        let loss = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss.item().unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!((loss.item().unwrap() - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let z = Tensor::<f64>::param(vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0], &[2, 3]).unwrap();
        softmax_cross_entropy(&z, &[1, 0]).unwrap().backward().unwrap();
        let g = z.grad().unwrap();
        for (row, label) in [(0usize, 1usize), (1, 0)] {
            let r = &z.data()[row * 3..row * 3 + 3];
            let s: f64 = r.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                let expect = (r[j].exp() / s - if j == label { 1.0 } else { 0.0 }) / 2.0;
                assert!((g[row * 3 + j] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cross_entropy_finite_differences() {
        let z = Tensor::new(vec![0.3, -1.2, 2.0, 0.7, 0.1, -0.4, 1.5, 0.0], &[2, 4]).unwrap();
        let r = gradcheck(|v| softmax_cross_entropy(&v[0], &[3, 0]), &[z], 1e-5, 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let z = Tensor::new(vec![1000.0, 0.0], &[1, 2]).unwrap();
        let loss = softmax_cross_entropy::<f64>(&z, &[1]).unwrap();
        assert!((loss.item().unwrap() - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        let z = Tensor::<f64>::zeros(&[1, 10]);
        assert!(matches!(softmax_cross_entropy(&z, &[10]), Err(Error::Contract(_))));
    }

    #[test]
    fn dropout_inference_is_identity() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = dropout(&x, 0.5, false, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let n = 20_000;
        let x = Tensor::<f64>::full(&[n], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = dropout(&x, 0.5, true, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dense_gradients() {
        let x = Tensor::new(vec![0.1, -0.3, 0.8, 1.1, 0.4, -0.6], &[2, 3]).unwrap();
        let w = Tensor::new(vec![0.2, -0.5, 0.7, 0.1, -0.9, 0.3], &[3, 2]).unwrap();
        let b = Tensor::new(vec![0.05, -0.02], &[2]).unwrap();
        let r = gradcheck(
            |v| Ok(dense(&v[0], &v[1], &v[2])?.square().sum()),
            &[x, w, b],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
