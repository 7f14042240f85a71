use crate::error::{Error, Result};

/// Hyperparameters of the descriptor layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorConfig {
    /// Patch side length in pixels.
    pub patch: usize,
    /// Width of the circular Gaussian weighting, half the patch side.
    pub sigma: f64,
    /// Bins of the reference-orientation histogram.
    pub orient_bins: usize,
    /// Subregions per side; the patch is split into `grid × grid` cells.
    pub grid: usize,
    /// Orientation bins per subregion.
    pub subregion_bins: usize,
    /// Per-element ceiling applied between the two normalizations.
    pub clamp: f64,
    /// Added to each L2 norm before dividing.
    pub norm_epsilon: f64,
}

impl DescriptorConfig {
    /// Standard configuration for a `patch × patch` input.
    pub fn new(patch: usize) -> Result<Self> {
        let cfg = DescriptorConfig {
            patch,
            sigma: patch as f64 / 2.0,
            orient_bins: 36,
            grid: 4,
            subregion_bins: 8,
            clamp: 0.2,
            norm_epsilon: 1e-12,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch < 16 || self.patch % self.grid != 0 {
            return Err(Error::contract(format!(
                "descriptor patch must be >= 16 and divisible by {}, got {}",
                self.grid, self.patch
            )));
        }
        if self.grid == 0 || self.orient_bins == 0 || self.subregion_bins == 0 {
            return Err(Error::contract("descriptor bin and grid counts must be positive"));
        }
        if !(self.sigma > 0.0 && self.clamp > 0.0 && self.norm_epsilon > 0.0) {
            return Err(Error::contract("descriptor sigma, clamp and epsilon must be positive"));
        }
        Ok(())
    }

    /// Elements per descriptor: `grid² · subregion_bins` (128 by default).
    pub fn descriptor_len(&self) -> usize {
        self.grid * self.grid * self.subregion_bins
    }

    /// Side of one subregion in pixels.
    pub fn cell(&self) -> usize {
        self.patch / self.grid
    }
}
