//! Shared test support: an independent scalar descriptor and small helpers.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pixel-loop descriptor in plain `f64`, written without any tensor
/// machinery. Angles are handled in degrees with an explicit wrap.
pub fn oracle_descriptor(patch: &[f64], p: usize) -> Vec<f64> {
    assert_eq!(patch.len(), p * p);
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, p as isize - 1) as usize;
        let c = c.clamp(0, p as isize - 1) as usize;
        patch[r * p + c]
    };
    let sigma = p as f64 / 2.0;
    let centre = (p as f64 - 1.0) / 2.0;

    let mut weighted = vec![0.0; p * p];
    let mut degrees = vec![0.0; p * p];
    for r in 0..p {
        for c in 0..p {
            let (ri, ci) = (r as isize, c as isize);
            let dx = at(ri, ci + 1) - at(ri, ci - 1);
            let dy = at(ri + 1, ci) - at(ri - 1, ci);
            let m = (dx * dx + dy * dy).sqrt();
            let theta = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
            let d2 = (r as f64 - centre).powi(2) + (c as f64 - centre).powi(2);
            weighted[r * p + c] = m * (-d2 / (2.0 * sigma * sigma)).exp();
            degrees[r * p + c] = theta.to_degrees();
        }
    }

    let vote = |hist: &mut [f64], deg: f64, amount: f64| {
        let bins = hist.len();
        let width = 360.0 / bins as f64;
        let mut d = deg;
        if d < 0.0 {
            d += 360.0;
        }
        let pos = d / width;
        let k = pos.floor();
        let frac = pos - k;
        let lo = (k as usize) % bins;
        hist[lo] += amount * (1.0 - frac);
        hist[(lo + 1) % bins] += amount * frac;
    };

    let mut orient = vec![0.0; 36];
    for i in 0..p * p {
        vote(&mut orient, degrees[i], weighted[i]);
    }
    let mut peak = 0;
    for k in 1..36 {
        if orient[k] > orient[peak] {
            peak = k;
        }
    }
    let reference = peak as f64 * 10.0;

    let cell = p / 4;
    let mut desc = vec![0.0; 128];
    for r in 0..p {
        for c in 0..p {
            let mut rel = degrees[r * p + c] - reference;
            while rel <= -180.0 {
                rel += 360.0;
            }
            while rel > 180.0 {
                rel -= 360.0;
            }
            let block = (r / cell) * 4 + c / cell;
            vote(&mut desc[block * 8..block * 8 + 8], rel, weighted[r * p + c]);
        }
    }

    let normalize = |v: &mut [f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt() + 1e-12;
        v.iter_mut().for_each(|x| *x /= n);
    };
    normalize(&mut desc);
    desc.iter_mut().for_each(|x| *x = x.min(0.2));
    normalize(&mut desc);
    desc
}

/// Counter-clockwise quarter turn: `out[r][c] = in[c][p-1-r]`.
pub fn rot90(patch: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * p];
    for r in 0..p {
        for c in 0..p {
            out[r * p + c] = patch[c * p + (p - 1 - r)];
        }
    }
    out
}

/// Reorders a descriptor of `patch` into the layout expected for
/// `rot90(patch)`: block `(i, j)` of the rotated descriptor is block
/// `(j, 3 - i)` of the original.
pub fn permute_blocks_rot90(desc: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 128];
    for i in 0..4 {
        for j in 0..4 {
            let src = j * 4 + (3 - i);
            let dst = i * 4 + j;
            out[dst * 8..dst * 8 + 8].copy_from_slice(&desc[src * 8..src * 8 + 8]);
        }
    }
    out
}

pub fn random_patch(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p * p).map(|_| rng.random::<f64>()).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Toy digits: class `c` is a bright 6×6 square at a class-specific spot
/// on a noisy background. `per_class` images per class, interleaved.
pub fn synthetic_dataset(per_class: usize, seed: u64) -> sift_cnn::data::Dataset {
    let mut r = rng(seed);
    let mut images = Vec::with_capacity(per_class * 10 * 784);
    let mut labels = Vec::with_capacity(per_class * 10);
    for _ in 0..per_class {
        for class in 0..10u8 {
            let (top, left) = (3 + (class as usize / 5) * 12, 2 + (class as usize % 5) * 5);
            for row in 0..28 {
                for col in 0..28 {
                    let inside = (top..top + 6).contains(&row) && (left..left + 6).contains(&col);
                    let base = if inside { 200 } else { 20 };
                    images.push(base + r.random_range(0..40u8));
                }
            }
            labels.push(class);
        }
    }
    sift_cnn::data::Dataset { images, labels, rows: 28, cols: 28 }
}

/// Writes `train` and `test` as the four standard IDX files under `dir`.
pub fn write_idx_split(dir: &std::path::Path, train: &sift_cnn::data::Dataset, test: &sift_cnn::data::Dataset) {
    use sift_cnn::data::{serialize_idx, IdxArray};
    std::fs::create_dir_all(dir).unwrap();
    for (prefix, d) in [("train", train), ("t10k", test)] {
        let images = IdxArray::new(vec![d.len(), d.rows, d.cols], d.images.clone()).unwrap();
        let labels = IdxArray::new(vec![d.len()], d.labels.clone()).unwrap();
        std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), serialize_idx(&images).unwrap()).unwrap();
        std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), serialize_idx(&labels).unwrap()).unwrap();
    }
}
