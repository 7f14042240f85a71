use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::idx::{read_idx_file, IdxArray};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetName {
    Mnist,
    Fashion,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Fashion => "fashion",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion" | "fashion-mnist" | "fashion_mnist" => Ok(DatasetName::Fashion),
            other => Err(Error::contract(format!("unknown dataset '{other}'"))),
        }
    }
}

/// Counter-clockwise quarter turns applied to every image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Rotation {
    #[default]
    None,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn degrees(self) -> u32 {
        self.quarter_turns() * 90
    }

    pub fn quarter_turns(self) -> u32 {
        match self {
            Rotation::None => 0,
            Rotation::R90 => 1,
            Rotation::R180 => 2,
            Rotation::R270 => 3,
        }
    }
}

impl fmt::Display for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

impl FromStr for Rotation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" | "none" => Ok(Rotation::None),
            "90" => Ok(Rotation::R90),
            "180" => Ok(Rotation::R180),
            "270" => Ok(Rotation::R270),
            other => Err(Error::contract(format!("rotation must be 0, 90, 180 or 270, got '{other}'"))),
        }
    }
}

/// One quarter turn of a `rows × cols` image: `out[r][c] = in[c][cols-1-r]`.
pub fn rot90(image: &[u8], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows != cols {
        return Err(Error::shape(format!("rotation needs square images, got {rows}x{cols}")));
    }
    if image.len() != rows * cols {
        return Err(Error::shape(format!("image of {} bytes is not {rows}x{cols}", image.len())));
    }
    let n = rows;
    Ok((0..n * n).map(|i| image[(i % n) * n + (n - 1 - i / n)]).collect())
}

/// Labelled grayscale images held as raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

/// Mini-batch: images `[B, 1, rows, cols]` scaled into `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LabeledBatch<T: Scalar> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn from_idx(images: IdxArray, labels: IdxArray) -> Result<Self> {
        let &[n, rows, cols] = images.dims.as_slice() else {
            return Err(Error::format(format!("image file has rank {}", images.dims.len())));
        };
        if labels.dims != [n] {
            return Err(Error::format(format!(
                "{n} images but label dims {:?}",
                labels.dims
            )));
        }
        if let Some(bad) = labels.data.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::format(format!("label {bad} outside 0..{NUM_CLASSES}")));
        }
        Ok(Dataset {
            images: images.data,
            labels: labels.data,
            rows,
            cols,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let s = self.image_size();
        &self.images[i * s..(i + 1) * s]
    }

    /// Keeps only the first `cap` examples.
    pub fn truncate(&mut self, cap: usize) {
        if cap < self.len() {
            self.labels.truncate(cap);
            self.images.truncate(cap * self.image_size());
        }
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.image_size());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// Copy with every image turned counter-clockwise by `rotation`.
    pub fn rotated(&self, rotation: Rotation) -> Result<Dataset> {
        if self.rows != self.cols {
            return Err(Error::shape(format!(
                "rotation needs square images, got {}x{}",
                self.rows, self.cols
            )));
        }
        let mut out = self.clone();
        for _ in 0..rotation.quarter_turns() {
            let mut next = Vec::with_capacity(out.images.len());
            for i in 0..out.len() {
                next.extend(rot90(out.image(i), out.rows, out.cols)?);
            }
            out.images = next;
        }
        Ok(out)
    }

    /// Examples `indices` as a batch tensor.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<LabeledBatch<T>> {
        let scale = T::from_f64_lossy(1.0 / 255.0);
        let mut data = Vec::with_capacity(indices.len() * self.image_size());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&b| T::from_f64_lossy(b as f64) * scale));
        }
        Ok(LabeledBatch {
            images: Tensor::new(data, &[indices.len(), 1, self.rows, self.cols])?,
            labels: indices.iter().map(|&i| self.labels[i] as usize).collect(),
        })
    }

    /// Index groups covering every example once. The last group may be
    /// short. Shuffling is a pure function of `seed`.
    pub fn batch_indices(&self, batch_size: usize, shuffle: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        if self.is_empty() {
            return Err(Error::contract("cannot batch an empty dataset"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        if shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
    }

    pub fn batches<T: Scalar>(
        &self,
        batch_size: usize,
        shuffle: bool,
        seed: u64,
    ) -> Result<impl Iterator<Item = Result<LabeledBatch<T>>> + '_> {
        let groups = self.batch_indices(batch_size, shuffle, seed)?;
        Ok(groups.into_iter().map(move |g| self.batch(&g)))
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Train and test partitions of one dataset.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: DatasetName,
    pub train: Dataset,
    pub test: Dataset,
}

const FILE_STEMS: [(&str, &str); 2] = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
];

fn locate(dir: &Path, stem: &str) -> Option<PathBuf> {
    let dotted = stem.replacen("-idx", ".idx", 1);
    [stem.to_string(), format!("{stem}.gz"), dotted.clone(), format!("{dotted}.gz")]
        .into_iter()
        .map(|f| dir.join(f))
        .find(|p| p.is_file())
}

impl DatasetSplit {
    /// Loads the four standard IDX files from `data_dir/<name>/`, falling
    /// back to `data_dir` itself.
    pub fn load(data_dir: &Path, name: DatasetName) -> Result<Self> {
        let nested = data_dir.join(name.as_str());
        let dir = if nested.is_dir() { nested } else { data_dir.to_path_buf() };
        let mut parts = Vec::with_capacity(2);
        for (img, lbl) in FILE_STEMS {
            let find = |stem: &str| {
                locate(&dir, stem).ok_or_else(|| {
                    Error::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("{stem} not found in {}", dir.display()),
                    ))
                })
            };
            let images = read_idx_file(&find(img)?)?;
            let labels = read_idx_file(&find(lbl)?)?;
            parts.push(Dataset::from_idx(images, labels)?);
        }
        let test = parts.pop().expect("two parts");
        let train = parts.pop().expect("two parts");
        Ok(DatasetSplit { name, train, test })
    }

    /// Caps the training partition at `cap` examples.
    pub fn with_train_subset(mut self, cap: Option<usize>) -> Self {
        if let Some(cap) = cap {
            self.train.truncate(cap);
        }
        self
    }
}
