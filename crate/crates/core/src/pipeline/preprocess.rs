//! Spacing normalization and intensity windowing of CT volumes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::volume::{resample, resample_mask, Mask, Spacing, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Intensity window `[lo, hi]` in HU, mapped linearly onto `[-1, 1]`.
    pub clip: [f64; 2],
    /// Isotropic target spacing in mm.
    pub spacing: f32,
    /// Edge length of the cubic training patch.
    pub patch: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { clip: [-90.0, 210.0], spacing: 1.0, patch: 128 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip[0] < self.clip[1] && self.clip.iter().all(|v| v.is_finite())) {
            return invalid(format!("clip window {:?} must satisfy lo < hi", self.clip));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return invalid(format!("target spacing must be > 0, got {}", self.spacing));
        }
        if self.patch == 0 {
            return invalid("patch size must be >= 1");
        }
        Ok(())
    }

    /// The patch must survive `depth` halvings.
    pub fn check_depth(&self, depth: usize) -> Result<()> {
        let f = 1usize << depth;
        if self.patch % f != 0 {
            return invalid(format!("patch {} is not divisible by 2^{depth}", self.patch));
        }
        Ok(())
    }

    /// `(clamp(v, lo, hi) − mid) / half_width`.
    pub fn normalize(&self, v: f64) -> f64 {
        let [lo, hi] = self.clip;
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        (v.clamp(lo, hi) - mid) / half
    }
}

/// Resample to the target spacing, then window and normalize.
pub fn preprocess(image: &Volume<f32>, cfg: &PreprocessConfig) -> Result<Volume<f32>> {
    cfg.validate()?;
    if !image.all_finite() {
        return Err(Error::NumericFault("input volume contains non-finite voxels".into()));
    }
    let r = resample(image, Spacing::iso(cfg.spacing))?;
    Ok(r.map(|v| cfg.normalize(v as f64) as f32))
}

/// Nearest-neighbor resampling of a label mask onto the preprocessing grid.
pub fn preprocess_mask(mask: &Mask, cfg: &PreprocessConfig) -> Result<Mask> {
    cfg.validate()?;
    resample_mask(mask, Spacing::iso(cfg.spacing))
}
