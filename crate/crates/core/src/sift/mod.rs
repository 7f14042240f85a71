//! Differentiable SIFT keypoint-descriptor layer.
//!
//! For each `p × p` patch:
//!
//! 1. central-difference gradients (replicate border) give per-pixel
//!    magnitude and orientation;
//! 2. magnitudes are weighted by a circular Gaussian with `σ = p/2`;
//! 3. a 36-bin soft orientation histogram picks the reference direction
//!    (center of the highest bin, detached from the graph);
//! 4. orientations are taken relative to the reference and soft-binned into
//!    8-bin histograms over a 4 × 4 grid of axis-aligned subregions;
//! 5. the 128 values are L2-normalized, clamped at 0.2 and renormalized.
//!
//! Soft binning splits each sample linearly between the two nearest bin
//! centers (bin `k` centered at `k · 360°/bins`, wrapping circularly), which
//! keeps the histogram differentiable in the orientation. The subregion grid
//! is not rotated; a 90° rotation of the input therefore permutes the
//! sixteen 8-bin blocks of the output.
//!
//! Every step is a [`Tensor`] operation, so the whole layer backpropagates
//! through the ordinary graph. The border-replicating differences and the
//! soft histogram are single fused operations with analytic gradients.

mod config;

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{BackwardFn, Scalar, Tensor};

pub use config::DescriptorConfig;

/// Per-pixel gradient magnitude and orientation of a patch.
#[derive(Debug, Clone)]
pub struct GradientField<T: Scalar> {
    /// `m(x, y) ≥ 0`.
    pub magnitude: Tensor<T>,
    /// `θ(x, y)` in radians, `(-π, π]`; 0 where the magnitude is 0.
    pub orientation: Tensor<T>,
}

/// Intermediate vectors of the descriptor normalization, each `[N × 128]`.
#[derive(Debug, Clone)]
pub struct DescriptorStages<T: Scalar> {
    /// Concatenated subregion histograms.
    pub raw: Tensor<T>,
    /// After the first L2 normalization.
    pub unit: Tensor<T>,
    /// After clamping at the threshold.
    pub clamped: Tensor<T>,
    /// Final renormalized descriptor.
    pub output: Tensor<T>,
}

fn square_side(shape: &[usize]) -> Result<usize> {
    match shape {
        &[h, w] if h == w && h > 0 => Ok(h),
        s => Err(Error::shape(format!("expected a square patch, got {s:?}"))),
    }
}

fn batch_dims(x: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    match x.shape() {
        &[n, h, w] if h == w && h > 0 => Ok((n, h)),
        s => Err(Error::shape(format!("expected [N × p × p] patches, got {s:?}"))),
    }
}

/// Central difference along rows (`axis = 0`) or columns (`axis = 1`) of
/// every `p × p` patch, replicating the border pixel.
fn central_difference<T: Scalar>(x: &Tensor<T>, n: usize, p: usize, axis: usize) -> Result<Tensor<T>> {
    let (stride, coord): (usize, fn(usize, usize) -> usize) = if axis == 0 {
        (p, |i, p| (i / p) % p)
    } else {
        (1, |i, p| i % p)
    };
    let neighbours = move |i: usize| {
        let k = coord(i, p);
        let next = if k + 1 < p { i + stride } else { i };
        let prev = if k > 0 { i - stride } else { i };
        (next, prev)
    };
    let v = x.data();
    let data = (0..n * p * p)
        .map(|i| {
            let (a, b) = neighbours(i);
            v[a] - v[b]
        })
        .collect();
    let backward: BackwardFn<T> = Box::new(move |g, _| {
        let mut gi = vec![T::zero(); g.len()];
        for (i, &gv) in g.iter().enumerate() {
            let (a, b) = neighbours(i);
            gi[a] = gi[a] + gv;
            gi[b] = gi[b] - gv;
        }
        vec![Some(gi)]
    });
    Tensor::from_op("central_difference", data, x.shape(), vec![x.clone()], backward)
}

fn gradient_field_batch<T: Scalar>(x: &Tensor<T>) -> Result<GradientField<T>> {
    let (n, p) = batch_dims(x)?;
    let dx = central_difference(x, n, p, 1)?;
    let dy = central_difference(x, n, p, 0)?;
    let magnitude = dx.square().add(&dy.square())?.sqrt();
    let orientation = dy.atan2(&dx)?;
    Ok(GradientField {
        magnitude,
        orientation,
    })
}

/// Gradient magnitude and orientation of a `p × p` patch, with `x` running
/// along columns and `y` along rows.
pub fn gradient_field<T: Scalar>(patch: &Tensor<T>) -> Result<GradientField<T>> {
    let p = square_side(patch.shape())?;
    let field = gradient_field_batch(&patch.reshape(&[1, p, p])?)?;
    Ok(GradientField {
        magnitude: field.magnitude.reshape(&[p, p])?,
        orientation: field.orientation.reshape(&[p, p])?,
    })
}

/// Circular Gaussian `exp(-((x-c)² + (y-c)²) / 2σ²)` centered at
/// `c = (p-1)/2`.
pub fn gaussian_weights<T: Scalar>(config: &DescriptorConfig) -> Tensor<T> {
    let p = config.patch;
    let c = (p as f64 - 1.0) / 2.0;
    let two_s2 = 2.0 * config.sigma * config.sigma;
    let data = (0..p * p)
        .map(|i| {
            let (r, col) = ((i / p) as f64, (i % p) as f64);
            T::from_f64_lossy((-((r - c).powi(2) + (col - c).powi(2)) / two_s2).exp())
        })
        .collect();
    Tensor::new(data, &[p, p]).expect("p×p weights")
}

/// Lower and upper bin slots plus the fractional position of each sample.
///
/// Samples come in consecutive patches of `pattern.len()`; sample `j` of
/// patch `q` feeds histogram `q · per_patch + pattern[j]`.
fn bin_slots<T: Scalar>(
    angle: &[T],
    pattern: &[usize],
    per_patch: usize,
    bins: usize,
) -> (Vec<usize>, Vec<usize>, Vec<T>) {
    let scale = T::from_f64_lossy(bins as f64 / (2.0 * PI));
    let b = bins as i64;
    let mut lo = Vec::with_capacity(angle.len());
    let mut hi = Vec::with_capacity(angle.len());
    let mut frac = Vec::with_capacity(angle.len());
    for (q, patch) in angle.chunks(pattern.len()).enumerate() {
        let first = q * per_patch;
        for (&a, &local) in patch.iter().zip(pattern) {
            let pos = a * scale;
            let f = pos.floor();
            let mut k = f.to_i64().expect("finite angle");
            while k < 0 {
                k += b;
            }
            while k >= b {
                k -= b;
            }
            let k = k as usize;
            let base = (first + local) * bins;
            lo.push(base + k);
            hi.push(base + if k + 1 == bins { 0 } else { k + 1 });
            frac.push(pos - f);
        }
    }
    (lo, hi, frac)
}

/// Soft-binned histograms of `angle` weighted by `weight`, grouped as in
/// [`bin_slots`]. Returns `[patches · per_patch × bins]`.
///
/// A sample at fractional bin position `t` adds `w·(1-t)` to the lower and
/// `w·t` to the upper bin, so the result is differentiable in both inputs.
fn soft_histogram<T: Scalar>(
    weight: &Tensor<T>,
    angle: &Tensor<T>,
    pattern: &[usize],
    per_patch: usize,
    bins: usize,
) -> Result<Tensor<T>> {
    if weight.numel() != angle.numel() || pattern.is_empty() || angle.numel() % pattern.len() != 0 {
        return Err(Error::shape("histogram weights, angles and grouping disagree in length"));
    }
    let n_groups = angle.numel() / pattern.len() * per_patch;
    let (lo, hi, frac) = bin_slots(angle.data(), pattern, per_patch, bins);
    let mut hist = vec![T::zero(); n_groups * bins];
    for (i, &w) in weight.data().iter().enumerate() {
        let upper = w * frac[i];
        hist[lo[i]] = hist[lo[i]] + (w - upper);
        hist[hi[i]] = hist[hi[i]] + upper;
    }
    if !weight.requires_grad() && !angle.requires_grad() {
        return Tensor::new(hist, &[n_groups, bins]);
    }
    let w = weight.to_vec();
    let scale = T::from_f64_lossy(bins as f64 / (2.0 * PI));
    let backward: BackwardFn<T> = Box::new(move |g, _| {
        let mut gw = Vec::with_capacity(w.len());
        let mut ga = Vec::with_capacity(w.len());
        for i in 0..w.len() {
            let (gl, gh) = (g[lo[i]], g[hi[i]]);
            gw.push(gl + frac[i] * (gh - gl));
            ga.push(w[i] * (gh - gl) * scale);
        }
        vec![Some(gw), Some(ga)]
    });
    Tensor::from_op(
        "soft_histogram",
        hist,
        &[n_groups, bins],
        vec![weight.clone(), angle.clone()],
        backward,
    )
}

/// Weighted, soft-binned orientation histogram of one patch.
///
/// Each pixel adds `m · w` split linearly between the two nearest bin
/// centers.
pub fn orientation_histogram<T: Scalar>(
    field: &GradientField<T>,
    weights: &Tensor<T>,
    bins: usize,
) -> Result<Tensor<T>> {
    if bins == 0 {
        return Err(Error::contract("histogram needs at least one bin"));
    }
    let weighted = field.magnitude.mul(weights)?;
    let n = weighted.numel();
    let flat = [n];
    soft_histogram(
        &weighted.reshape(&flat)?,
        &field.orientation.reshape(&flat)?,
        &vec![0; n],
        1,
        bins,
    )?
    .reshape(&[bins])
}

fn peak_bin<T: Scalar>(hist: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in hist.iter().enumerate() {
        if v > hist[best] {
            best = i;
        }
    }
    best
}

/// Center angle (radians, `[0, 2π)`) of the highest bin; ties go to the
/// lowest index. The result is a plain number, not part of any graph.
pub fn dominant_orientation<T: Scalar>(hist: &Tensor<T>) -> f64 {
    let bins = hist.numel().max(1);
    peak_bin(hist.data()) as f64 * 2.0 * PI / bins as f64
}

/// Divides each row of `[rows × len]` by its L2 norm plus `eps`.
fn l2_normalize_rows<T: Scalar>(x: &Tensor<T>, rows: usize, len: usize, eps: f64) -> Result<Tensor<T>> {
    let row_of: Arc<[usize]> = (0..rows * len).map(|i| i / len).collect();
    let norm = x.square().scatter_add(row_of.clone(), &[rows])?.sqrt().offset(eps);
    x.div(&norm.gather(row_of, &[rows, len])?)
}

fn describe<T: Scalar>(patches: &Tensor<T>, config: &DescriptorConfig) -> Result<DescriptorStages<T>> {
    config.validate()?;
    let (n, p) = batch_dims(patches)?;
    if p != config.patch {
        return Err(Error::shape(format!(
            "descriptor configured for {0}×{0} patches, got {p}×{p}",
            config.patch
        )));
    }
    let area = p * p;
    let field = gradient_field_batch(patches)?;

    let w = gaussian_weights::<T>(config);
    let tiled = Tensor::new(w.data().repeat(n), patches.shape())?;
    let weighted = field.magnitude.mul(&tiled)?;

    // reference orientation per patch, detached
    let ref_hist = soft_histogram(
        &weighted.detach(),
        &field.orientation.detach(),
        &vec![0; area],
        1,
        config.orient_bins,
    )?;
    let step = 2.0 * PI / config.orient_bins as f64;
    let reference: Vec<T> = ref_hist
        .data()
        .chunks(config.orient_bins)
        .flat_map(|h| {
            let angle = T::from_f64_lossy(peak_bin(h) as f64 * step);
            std::iter::repeat_n(angle, area)
        })
        .collect();
    let relative = field
        .orientation
        .sub(&Tensor::new(reference, patches.shape())?)?;

    let (grid, cell) = (config.grid, config.cell());
    let cells = grid * grid;
    let cell_of: Vec<usize> = (0..area).map(|j| (j / p / cell) * grid + (j % p) / cell).collect();
    let len = config.descriptor_len();
    let raw = soft_histogram(&weighted, &relative, &cell_of, cells, config.subregion_bins)?
        .reshape(&[n, len])?;

    let unit = l2_normalize_rows(&raw, n, len, config.norm_epsilon)?;
    let clamped = unit.clamp_max(config.clamp);
    let output = l2_normalize_rows(&clamped, n, len, config.norm_epsilon)?;
    Ok(DescriptorStages {
        raw,
        unit,
        clamped,
        output,
    })
}

/// All normalization stages of the descriptor of one `p × p` patch, each
/// reshaped to `[128]`.
pub fn sift_descriptor_stages<T: Scalar>(
    patch: &Tensor<T>,
    config: &DescriptorConfig,
) -> Result<DescriptorStages<T>> {
    let p = square_side(patch.shape())?;
    let s = describe(&patch.reshape(&[1, p, p])?, config)?;
    let len = [config.descriptor_len()];
    Ok(DescriptorStages {
        raw: s.raw.reshape(&len)?,
        unit: s.unit.reshape(&len)?,
        clamped: s.clamped.reshape(&len)?,
        output: s.output.reshape(&len)?,
    })
}

/// 128-element descriptor of one `p × p` patch.
pub fn sift_descriptor<T: Scalar>(patch: &Tensor<T>, config: &DescriptorConfig) -> Result<Tensor<T>> {
    Ok(sift_descriptor_stages(patch, config)?.output)
}

/// Applies the descriptor to every channel of `[B × C × p × p]`, giving
/// `[B × C·128]` with channels in order.
pub fn sift_layer<T: Scalar>(input: &Tensor<T>, config: &DescriptorConfig) -> Result<Tensor<T>> {
    let &[b, c, h, w] = input.shape() else {
        return Err(Error::shape(format!("sift layer input must be rank 4, got {:?}", input.shape())));
    };
    if h != config.patch || w != config.patch {
        return Err(Error::shape(format!(
            "sift layer expects {0}×{0} maps, got {h}×{w}",
            config.patch
        )));
    }
    let stages = describe(&input.reshape(&[b * c, h, w])?, config)?;
    stages.output.reshape(&[b, c * config.descriptor_len()])
}

/// How far a set of patches sits from the layer's non-differentiable sets.
#[derive(Debug, Clone, Copy)]
pub struct Genericity {
    /// Smallest gradient magnitude (atan2 is singular at 0).
    pub min_magnitude: f64,
    /// Smallest distance, in bins, of a relative orientation to a bin center.
    pub bin_margin: f64,
    /// Smallest relative gap between the two highest reference-histogram bins.
    pub peak_gap: f64,
    /// Smallest distance of a normalized element to the clamp threshold.
    pub clamp_margin: f64,
}

impl Genericity {
    /// Margins comfortable for central differences with a step around 1e-5.
    pub fn is_generic(&self) -> bool {
        self.min_magnitude > 1e-3 && self.bin_margin > 1e-3 && self.peak_gap > 1e-3 && self.clamp_margin > 1e-3
    }
}

/// Measures [`Genericity`] of `[N × p × p]` patches.
pub fn genericity(patches: &Tensor<f64>, config: &DescriptorConfig) -> Result<Genericity> {
    let (_, p) = batch_dims(patches)?;
    let patches = patches.detach();
    let stages = describe(&patches, config)?;
    let field = gradient_field_batch(&patches)?;
    let area = p * p;
    let w = gaussian_weights::<f64>(config);
    let weighted: Vec<f64> = field
        .magnitude
        .data()
        .iter()
        .enumerate()
        .map(|(i, &m)| m * w.data()[i % area])
        .collect();
    let ref_hist = soft_histogram(
        &Tensor::new(weighted, patches.shape())?,
        &field.orientation,
        &vec![0; area],
        1,
        config.orient_bins,
    )?;

    let mut peak_gap = f64::INFINITY;
    let mut bin_margin = f64::INFINITY;
    let ref_step = 2.0 * PI / config.orient_bins as f64;
    let sub_scale = config.subregion_bins as f64 / (2.0 * PI);
    for (patch, h) in ref_hist.data().chunks(config.orient_bins).enumerate() {
        let top = peak_bin(h);
        let second = h
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if h[top] > 0.0 {
            peak_gap = peak_gap.min((h[top] - second) / h[top]);
        }
        let reference = top as f64 * ref_step;
        for &theta in &field.orientation.data()[patch * area..(patch + 1) * area] {
            let pos = (theta - reference) * sub_scale;
            bin_margin = bin_margin.min((pos - pos.round()).abs());
        }
    }
    let min_magnitude = field.magnitude.data().iter().copied().fold(f64::INFINITY, f64::min);
    let clamp_margin = stages
        .unit
        .data()
        .iter()
        .map(|&v| (v - config.clamp).abs())
        .fold(f64::INFINITY, f64::min);
    Ok(Genericity {
        min_magnitude,
        bin_margin,
        peak_gap,
        clamp_margin,
    })
}
