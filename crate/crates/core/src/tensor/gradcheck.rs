use super::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so entries whose true gradient
/// is ~0 are judged on absolute error at this scale.
const DENOM_FLOOR: f64 = 1e-6;

/// Result of comparing analytic against central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Maximum relative error per input, in input order.
    pub max_rel_err: Vec<f64>,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err.iter().all(|&e| e < self.tol)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks the gradient of a scalar-valued `f` at `inputs` against central
/// differences with step `eps`.
///
/// Every input is differentiated. `f` must be differentiable at the point;
/// picking such a point is the caller's job.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|t| Tensor::param(t.to_vec(), t.shape()))
        .collect::<Result<_>>()?;
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(Error::contract(format!(
            "gradcheck needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    out.backward()?;

    let mut max_rel_err = Vec::with_capacity(inputs.len());
    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let mut worst = 0.0f64;
        for i in 0..leaf.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let probe: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut d = t.to_vec();
                        if j == which {
                            d[i] += delta;
                        }
                        Tensor::new(d, t.shape())
                    })
                    .collect::<Result<_>>()?;
                f(&probe)?.item()
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        max_rel_err.push(worst);
    }
    Ok(GradcheckReport { max_rel_err, tol })
}
