use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::train::{Model, FEATURE_TAGS};

/// Examples drawn per class for embedding plots.
pub const EXPORT_PER_CLASS: usize = 300;

/// Seeded choice of `per_class` indices from every class, grouped by class.
pub fn sample_per_class(data: &Dataset, per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(per_class * NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] as usize == class).collect();
        if members.len() < per_class {
            return Err(Error::contract(format!(
                "class {class} has {} examples, {per_class} requested",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..per_class]);
    }
    Ok(picked)
}

/// Writes `label,f1,...,fn` rows of the `tag` activation for a per-class
/// sample of `data`. Returns the number of rows written.
pub fn export_features<T: Scalar, W: Write>(
    model: &Model<T>,
    data: &Dataset,
    tag: &str,
    per_class: usize,
    seed: u64,
    out: &mut W,
) -> Result<usize> {
    if !FEATURE_TAGS.contains(&tag) {
        return Err(Error::contract(format!(
            "unknown feature tag '{tag}', expected one of {FEATURE_TAGS:?}"
        )));
    }
    let picked = sample_per_class(data, per_class, seed)?;
    let bound = model.bind(false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for chunk in picked.chunks(100) {
        let batch = data.batch::<T>(chunk)?;
        let feats = model.forward(&bound, &batch.images, false, &mut rng)?.tagged(tag)?;
        let width = feats.shape()[1];
        for (label, row) in batch.labels.iter().zip(feats.data().chunks(width)) {
            let mut line = label.to_string();
            for v in row {
                line.push(',');
                line.push_str(&v.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
    }
    Ok(picked.len())
}
