//! Run configuration: defaults, then a `key=value` file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{DatasetName, Rotation};
use crate::error::{Error, Result};
use crate::nn::PoolKind;
use crate::train::{AdamConfig, Arch, TrainConfig, Variant};

/// Overrides the default data directory.
pub const DATA_DIR_ENV: &str = "SIFTCNN_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetName,
    pub variant: Arch,
    pub pool: PoolKind,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub subset: Option<usize>,
    pub rotate: Rotation,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetName::Mnist,
            variant: Arch::Sift,
            pool: PoolKind::Max,
            epochs: 10,
            batch: 64,
            lr: 1e-3,
            seed: 0,
            data_dir: std::env::var_os(DATA_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("data")),
            out_dir: PathBuf::from("runs"),
            subset: None,
            rotate: Rotation::None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::contract(format!("invalid value '{value}' for {key}")))
}

impl RunConfig {
    /// Applies one setting. Keys match the long flag names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim().replace('_', "-").as_str() {
            "dataset" => self.dataset = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "pool" => self.pool = value.parse()?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch" => self.batch = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "data-dir" => self.data_dir = PathBuf::from(value),
            "out-dir" => self.out_dir = PathBuf::from(value),
            "subset" => {
                self.subset = match value {
                    "" | "none" | "0" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "rotate" => self.rotate = value.parse()?,
            other => return Err(Error::contract(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::contract(format!("config line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_file_text(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::contract("batch must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::contract(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        Ok(())
    }

    pub fn model_variant(&self) -> Variant {
        Variant::new(self.dataset, self.variant, self.pool)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}
