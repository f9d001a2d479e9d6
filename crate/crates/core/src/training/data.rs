//! Batch assembly for the three training steps.
//!
//! Batch element `i` of global step `s` draws from `child_rng(step_seed, i)`
//! with `step_seed = child_seed(stage_seed, s + 1)`, so batches do not depend
//! on thread count or build order.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::config::ImageAugConfig;
use crate::error::{invalid, Result};
use crate::pipeline::Case;
use crate::seed::{child_rng, Rng};
use crate::synthgen::{augment_step2_input, Manifest, Step2AugConfig};
use crate::tensornet::{Shape, Tensor};
use crate::volume::{crop_mask, crop_padded, pvol, rotation_matrix, warp_nearest, Dims, EulerZyx, Mask, Mat3, Volume};

/// Image patches with kidney (kidney ∪ tumor) and tumor targets, each `(n, 1, p, p, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub image: Tensor<f32>,
    pub kidney: Tensor<f32>,
    pub tumor: Tensor<f32>,
}

/// Degraded kidney masks and protuberance targets, each `(n, 1, p, p, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBatch {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

fn stack(vols: Vec<Volume<f32>>) -> Result<Tensor<f32>> {
    let refs: Vec<&Volume<f32>> = vols.iter().collect();
    Tensor::from_volumes(&refs)
}

fn mask_f32(m: &Mask) -> Volume<f32> {
    Volume::from_mask(m)
}

/// Crop origin for a `patch`-sized window: centered on a random foreground
/// voxel with probability `fg_fraction`, otherwise uniform. Windows stay
/// inside the grid whenever the grid is large enough.
fn crop_origin(rng: &mut Rng, dims: Dims, patch: usize, fg: &Mask, fg_fraction: f64) -> [i64; 3] {
    let n = dims.as_array().map(|v| v as i64);
    let p = patch as i64;
    let lo = n.map(|v| (v - p).min(0));
    let hi = n.map(|v| (v - p).max(0));
    let use_fg = !fg.is_empty() && rng.random_bool(fg_fraction);
    if use_fg {
        let k = rng.random_range(0..fg.count());
        let c = fg.voxels().nth(k).expect("index below count");
        [0, 1, 2].map(|a| (c[a] as i64 - p / 2).clamp(lo[a], hi[a]))
    } else {
        [0, 1, 2].map(|a| if lo[a] == hi[a] { lo[a] } else { rng.random_range(lo[a]..=hi[a]) })
    }
}

fn random_warp(rng: &mut Rng, aug: &ImageAugConfig) -> Option<Mat3> {
    let rotate = rng.random_bool(aug.p_rotate);
    let scale = rng.random_bool(aug.p_scale);
    if !rotate && !scale {
        return None;
    }
    let angles = if rotate {
        let r = aug.rotation;
        let mut a = || if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        EulerZyx::new(a(), a(), a())
    } else {
        EulerZyx::default()
    };
    let s = if scale && aug.scale[0] < aug.scale[1] { rng.random_range(aug.scale[0]..=aug.scale[1]) } else if scale { aug.scale[0] } else { 1.0 };
    let r = rotation_matrix(angles);
    // inverse of s·R is Rᵀ/s
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = r[j][i] / s;
        }
    }
    Some(inv)
}

/// One augmented training patch drawn from `cases`.
pub fn image_patch(cases: &[Case], patch: usize, aug: &ImageAugConfig, rng: &mut Rng) -> Result<(Volume<f32>, Mask, Mask)> {
    if cases.is_empty() {
        return invalid("no training images");
    }
    let case = &cases[rng.random_range(0..cases.len())];
    let dims = case.image.dims();
    let spacing = case.image.spacing();
    let kidney = case.kidney.union(&case.tumor)?;
    let (mut image, kidney, tumor) = match random_warp(rng, aug) {
        Some(inv) => {
            let center = dims.center();
            let bg = aug.background as f32;
            let image = Volume::new(dims, spacing, warp_nearest(case.image.data(), dims, center, &inv, bg))?;
            let k = Mask::new(dims, spacing, warp_nearest(kidney.data(), dims, center, &inv, false))?;
            let t = Mask::new(dims, spacing, warp_nearest(case.tumor.data(), dims, center, &inv, false))?;
            (image, k, t)
        }
        None => (case.image.clone(), kidney, case.tumor.clone()),
    };
    if rng.random_bool(aug.p_noise) && aug.noise_std[1] > 0.0 {
        let std = if aug.noise_std[0] < aug.noise_std[1] { rng.random_range(aug.noise_std[0]..=aug.noise_std[1]) } else { aug.noise_std[0] };
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in image.data_mut() {
            *v += normal.sample(rng) as f32;
        }
    }
    let size = Dims::cube(patch);
    let origin = crop_origin(rng, dims, patch, &kidney, aug.foreground_fraction);
    Ok((
        crop_padded(&image, origin, size, aug.background as f32)?,
        crop_mask(&kidney, origin, size)?,
        crop_mask(&tumor, origin, size)?,
    ))
}

pub fn image_batch(cases: &[Case], batch: usize, patch: usize, aug: &ImageAugConfig, step_seed: u64) -> Result<ImageBatch> {
    let items: Vec<(Volume<f32>, Mask, Mask)> = (0..batch)
        .into_par_iter()
        .map(|i| image_patch(cases, patch, aug, &mut child_rng(step_seed, i as u64)))
        .collect::<Result<_>>()?;
    let mut image = Vec::with_capacity(batch);
    let mut kidney = Vec::with_capacity(batch);
    let mut tumor = Vec::with_capacity(batch);
    for (i, k, t) in items {
        image.push(i);
        kidney.push(mask_f32(&k));
        tumor.push(mask_f32(&t));
    }
    Ok(ImageBatch { image: stack(image)?, kidney: stack(kidney)?, tumor: stack(tumor)? })
}

/// Synthetic samples read from disk on demand.
#[derive(Debug, Clone)]
pub struct SynthSource {
    root: PathBuf,
    manifest: Manifest,
}

impl SynthSource {
    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let manifest = Manifest::load(path)?;
        if manifest.samples.is_empty() {
            return invalid(format!("{}: synthetic manifest lists no samples", path.display()));
        }
        Ok(Self { root: path.parent().unwrap_or(Path::new(".")).to_path_buf(), manifest })
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Degraded input and binary target for sample `index`.
    pub fn load(&self, index: usize) -> Result<(Mask, Mask)> {
        let r = &self.manifest.samples[index];
        let input = pvol::read_mask(self.root.join(&r.input_path))?;
        let target = pvol::read_mask(self.root.join(&r.target_path))?;
        if input.dims() != target.dims() {
            return invalid(format!("sample {index}: input and target dims differ"));
        }
        Ok((input, target))
    }

    pub fn patch(&self, patch: usize, aug: &Step2AugConfig, fg_fraction: f64, rng: &mut Rng) -> Result<(Volume<f32>, Mask)> {
        let (input, target) = self.load(rng.random_range(0..self.len()))?;
        let size = Dims::cube(patch);
        let origin = crop_origin(rng, input.dims(), patch, &target, fg_fraction);
        let input = crop_mask(&input, origin, size)?;
        let target = crop_mask(&target, origin, size)?;
        Ok((augment_step2_input(&input, aug, rng)?, target))
    }

    pub fn batch(&self, batch: usize, patch: usize, aug: &Step2AugConfig, fg_fraction: f64, step_seed: u64) -> Result<SynthBatch> {
        let items: Vec<(Volume<f32>, Mask)> = (0..batch)
            .into_par_iter()
            .map(|i| self.patch(patch, aug, fg_fraction, &mut child_rng(step_seed, i as u64)))
            .collect::<Result<_>>()?;
        let mut input = Vec::with_capacity(batch);
        let mut target = Vec::with_capacity(batch);
        for (i, t) in items {
            input.push(i);
            target.push(mask_f32(&t));
        }
        Ok(SynthBatch { input: stack(input)?, target: stack(target)? })
    }
}

/// Shape of a single-channel batch of cubic patches.
pub fn patch_shape(batch: usize, patch: usize) -> Shape {
    Shape::new(batch, 1, patch, patch, patch)
}
