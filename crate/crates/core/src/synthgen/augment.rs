//! Degradations that make binary kidney masks look like soft network output.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::seed::Rng;
use crate::volume::{gaussian_blur, Mask, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step2AugConfig {
    /// Blur σ range in voxels.
    pub blur_sigma: [f64; 2],
    pub noise_std: [f64; 2],
    /// Global additive intensity shift range.
    pub shift: [f64; 2],
    pub p_blur: f64,
    pub p_noise: f64,
    pub p_shift: f64,
}

impl Default for Step2AugConfig {
    fn default() -> Self {
        Self { blur_sigma: [0.5, 2.0], noise_std: [0.0, 0.1], shift: [-0.2, 0.2], p_blur: 0.5, p_noise: 0.5, p_shift: 0.5 }
    }
}

impl Step2AugConfig {
    /// No augmentation at all.
    pub fn off() -> Self {
        Self { p_blur: 0.0, p_noise: 0.0, p_shift: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, r: [f64; 2], lo: f64, hi: f64| {
            if !(r[0] >= lo && r[0] <= r[1] && r[1] <= hi) {
                return invalid(format!("{name} range {r:?} must be ordered within [{lo}, {hi}]"));
            }
            Ok(())
        };
        range("blur_sigma", self.blur_sigma, 0.0, 8.0)?;
        range("noise_std", self.noise_std, 0.0, 1.0)?;
        range("shift", self.shift, -1.0, 1.0)?;
        for p in [self.p_blur, self.p_noise, self.p_shift] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Blur, add noise and shift (each with its own probability, in that order),
/// then clamp to `[0, 1]`.
pub fn augment_step2_input<T: Scalar>(m: &Mask, cfg: &Step2AugConfig, rng: &mut Rng) -> Result<Volume<T>> {
    cfg.validate()?;
    let mut v: Volume<T> = Volume::from_mask(m);
    if rng.random_bool(cfg.p_blur) {
        v = gaussian_blur(&v, draw(rng, cfg.blur_sigma))?;
    }
    if rng.random_bool(cfg.p_noise) {
        let std = draw(rng, cfg.noise_std);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite std");
            for x in v.data_mut() {
                *x += T::lit(normal.sample(rng));
            }
        }
    }
    if rng.random_bool(cfg.p_shift) {
        let s = T::lit(draw(rng, cfg.shift));
        for x in v.data_mut() {
            *x += s;
        }
    }
    for x in v.data_mut() {
        *x = x.max(T::zero()).min(T::one());
    }
    Ok(v)
}
