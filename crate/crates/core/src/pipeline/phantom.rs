//! Labeled CT-like phantoms with isodense and contrasting tumors.
//!
//! Intensities are already in normalized units (background −1, kidney 0.2),
//! so phantoms bypass [`super::preprocess`].

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetEntry, DatasetManifest, Split, DATASET_VERSION};
use crate::error::{invalid, Result};
use crate::seed::{child_rng, child_seed, Rng};
use crate::synthgen::{generate_sample, ShapeParams, SynthConfig, SynthSample};
use crate::volume::{gaussian_blur, pvol, Dims, Volume};

pub const DATASET_NAME: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub shapes: SynthConfig,
    pub background: f64,
    pub kidney: f64,
    /// Probability that the tumor shares the kidney intensity.
    pub p_iso: f64,
    /// Magnitude range of a contrasting tumor's intensity; the sign is random.
    pub contrast: [f64; 2],
    pub noise_std: f64,
    /// Blur applied to the noise field only.
    pub noise_blur: f64,
    /// Trailing fraction of the entries tagged as test.
    pub test_fraction: f64,
}

impl PhantomConfig {
    /// Organ-scale shapes filling a good part of an `n³` grid.
    pub fn for_grid(n: usize) -> Self {
        let s = n as f64 / 32.0;
        let kidney = ShapeParams {
            radius_min: [10.0 * s, 6.0 * s, 5.0 * s],
            radius_max: [12.0 * s, 7.0 * s, 6.0 * s],
            ..ShapeParams::kidney(n)
        };
        let tumor = ShapeParams { radius_min: [3.0 * s; 3], radius_max: [5.0 * s; 3], ..ShapeParams::tumor(n) };
        Self {
            shapes: SynthConfig { kidney, tumor, ..SynthConfig::for_grid(n) },
            background: -1.0,
            kidney: 0.2,
            p_iso: 0.5,
            contrast: [0.4, 0.7],
            noise_std: 0.05,
            noise_blur: 0.5,
            test_fraction: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes.validate()?;
        if !(0.0..=1.0).contains(&self.p_iso) || !(0.0..=1.0).contains(&self.test_fraction) {
            return invalid("p_iso and test_fraction must lie in [0, 1]");
        }
        if !(self.contrast[0] >= 0.0 && self.contrast[0] <= self.contrast[1]) {
            return invalid(format!("contrast range {:?} must be ordered and >= 0", self.contrast));
        }
        if !(self.noise_std >= 0.0 && self.noise_blur >= 0.0) {
            return invalid("noise_std and noise_blur must be >= 0");
        }
        Ok(())
    }

    pub fn grid(&self) -> Dims {
        self.shapes.kidney.grid
    }
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self::for_grid(32)
    }
}

/// Paint the sample's masks and add blurred noise. Returns the image and
/// whether the tumor is isodense.
pub fn phantom_image(s: &SynthSample, cfg: &PhantomConfig, rng: &mut Rng) -> Result<(Volume<f32>, bool)> {
    cfg.validate()?;
    let isodense = rng.random_bool(cfg.p_iso);
    let tumor_value = if isodense {
        cfg.kidney
    } else {
        let m = if cfg.contrast[0] == cfg.contrast[1] { cfg.contrast[0] } else { rng.random_range(cfg.contrast[0]..=cfg.contrast[1]) };
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    };
    let dims = s.kidney_mask.dims();
    let mut noise = Volume::<f64>::zeros(dims, s.kidney_mask.spacing());
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("finite std");
        for v in noise.data_mut() {
            *v = normal.sample(rng);
        }
        noise = gaussian_blur(&noise, cfg.noise_blur)?;
    }
    let data = (0..dims.len())
        .map(|i| {
            let base = if s.tumor_mask.data()[i] {
                tumor_value
            } else if s.kidney_mask.data()[i] {
                cfg.kidney
            } else {
                cfg.background
            };
            (base + noise.data()[i]) as f32
        })
        .collect();
    Ok((Volume::new(dims, s.kidney_mask.spacing(), data)?, isodense))
}

fn write_phantom(out: &Path, index: usize, seed: u64, split: Split, cfg: &PhantomConfig) -> Result<DatasetEntry> {
    let s = generate_sample(seed, &cfg.shapes)?;
    let (image, isodense) = phantom_image(&s, cfg, &mut child_rng(seed, 1))?;
    let name = |kind: &str| format!("phantom_{index:04}_{kind}.pvol");
    let e = DatasetEntry {
        image_path: name("image"),
        kidney_path: name("kidney"),
        tumor_path: name("tumor"),
        split,
        seed,
        isodense: Some(isodense),
    };
    pvol::write_volume(out.join(&e.image_path), &image)?;
    pvol::write_mask(out.join(&e.kidney_path), &s.kidney_mask)?;
    pvol::write_mask(out.join(&e.tumor_path), &s.tumor_mask)?;
    Ok(e)
}

/// Write `n` phantoms and `dataset.json` into `out_dir`; the last
/// `round(n · test_fraction)` entries form the test split.
pub fn make_phantom_dataset(n: usize, master_seed: u64, cfg: &PhantomConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    if n == 0 {
        return invalid("n must be >= 1");
    }
    cfg.validate()?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out)?;
    let n_test = (n as f64 * cfg.test_fraction).round() as usize;
    let entries = (0..n)
        .into_par_iter()
        .map(|i| {
            let split = if i + n_test >= n { Split::Test } else { Split::Train };
            write_phantom(out, i, child_seed(master_seed, i as u64), split, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = DatasetManifest { version: DATASET_VERSION, entries };
    m.save(out.join(DATASET_NAME))?;
    Ok(m)
}
