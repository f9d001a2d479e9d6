//! Procedural kidney and tumor masks.
//!
//! A shape is an ellipsoid centered in the grid whose radius is modulated by
//! a sum of a few random low-frequency plane waves over the unit direction.
//! Kidneys additionally get a quadratic bend along `x`, giving the bean
//! profile. The largest 26-connected component is kept.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed::Rng;
use crate::volume::{connected_components, Connectivity, Dims, Mask, Spacing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub grid: Dims,
    /// Lower bound of the semi-axes `[rz, ry, rx]` in voxels.
    pub radius_min: [f64; 3],
    pub radius_max: [f64; 3],
    /// Peak relative radial deviation, in `[0, 0.5)`.
    pub perturbation: f64,
    /// Number of plane-wave modes in the perturbation.
    pub modes: usize,
    /// Largest angular frequency of a mode, in half-turns over the unit
    /// sphere. Lower is smoother.
    pub max_frequency: f64,
    /// Displacement along `x` at the poles, as a fraction of `rx`.
    pub bend: f64,
}

impl ShapeParams {
    /// Bean-shaped kidney sized for a `n³` grid (tuned at 64³).
    pub fn kidney(n: usize) -> Self {
        let s = n as f64 / 64.0;
        Self {
            grid: Dims::cube(n),
            radius_min: [14.0 * s, 8.0 * s, 6.0 * s],
            radius_max: [18.0 * s, 10.0 * s, 8.0 * s],
            perturbation: 0.12,
            modes: 4,
            max_frequency: 2.0,
            bend: 0.35,
        }
    }

    /// Roughly spherical tumor sized for a `n³` grid.
    pub fn tumor(n: usize) -> Self {
        let s = n as f64 / 64.0;
        Self {
            grid: Dims::cube(n),
            radius_min: [4.0 * s; 3],
            radius_max: [8.0 * s; 3],
            perturbation: 0.1,
            modes: 3,
            max_frequency: 2.0,
            bend: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.perturbation) {
            return invalid(format!("perturbation must lie in [0, 0.5), got {}", self.perturbation));
        }
        if !(self.max_frequency >= 0.0 && self.max_frequency.is_finite()) {
            return invalid("max_frequency must be finite and >= 0");
        }
        if !(self.bend >= 0.0 && self.bend.is_finite()) {
            return invalid("bend must be finite and >= 0");
        }
        let half = self.grid.as_array().map(|n| n as f64 / 2.0);
        for k in 0..3 {
            let (lo, hi) = (self.radius_min[k], self.radius_max[k]);
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return invalid(format!("radius range {k} must satisfy 0 < min <= max, got [{lo}, {hi}]"));
            }
            let extent = hi * (1.0 + self.perturbation) + if k == 2 { self.bend * hi } else { 0.0 };
            if extent + 1.0 > half[k] {
                return invalid(format!("radius {hi} (extent {extent:.1}) does not fit a grid of {}", self.grid.as_array()[k]));
            }
        }
        Ok(())
    }

    /// Voxel-count bounds implied by the radii and perturbation.
    pub fn volume_bounds(&self) -> (f64, f64) {
        let v = |r: [f64; 3], f: f64| 4.0 / 3.0 * PI * r[0] * r[1] * r[2] * f.powi(3);
        (v(self.radius_min, 1.0 - self.perturbation), v(self.radius_max, 1.0 + self.perturbation))
    }
}

struct Mode {
    dir: [f64; 3],
    freq: f64,
    phase: f64,
    weight: f64,
}

fn unit_vector(rng: &mut Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

fn sample_range(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn generate(rng: &mut Rng, p: &ShapeParams) -> Result<Mask> {
    p.validate()?;
    let r: [f64; 3] = std::array::from_fn(|k| sample_range(rng, p.radius_min[k], p.radius_max[k]));
    let modes: Vec<Mode> = (0..p.modes)
        .map(|_| Mode {
            dir: unit_vector(rng),
            freq: sample_range(rng, p.max_frequency.min(1.0), p.max_frequency),
            phase: rng.random_range(0.0..2.0 * PI),
            weight: rng.random_range(0.5..=1.0),
        })
        .collect();
    let bend_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let total_weight: f64 = modes.iter().map(|m| m.weight).sum();
    let amp = if total_weight > 0.0 { p.perturbation / total_weight } else { 0.0 };
    let bend = bend_sign * p.bend * r[2];

    let dims = p.grid;
    let c = dims.center();
    let reach = [r[0] * (1.0 + p.perturbation) + 1.0, r[1] * (1.0 + p.perturbation) + 1.0, r[2] * (1.0 + p.perturbation) + p.bend * r[2] + 1.0];
    let range = |k: usize, n: usize| {
        let lo = (c[k] - reach[k]).floor().max(0.0) as usize;
        let hi = ((c[k] + reach[k]).ceil() as usize).min(n - 1);
        lo..=hi
    };
    let mut m = Mask::empty(dims, Spacing::default());
    for z in range(0, dims.nz) {
        let qz = (z as f64 - c[0]) / r[0];
        let shift = bend * qz * qz;
        for y in range(1, dims.ny) {
            let qy = (y as f64 - c[1]) / r[1];
            for x in range(2, dims.nx) {
                let qx = (x as f64 - c[2] - shift) / r[2];
                let rho = (qz * qz + qy * qy + qx * qx).sqrt();
                let limit = if rho > 0.0 && amp > 0.0 {
                    let u = [qz / rho, qy / rho, qx / rho];
                    let f: f64 = modes
                        .iter()
                        .map(|md| {
                            let t = md.dir[0] * u[0] + md.dir[1] * u[1] + md.dir[2] * u[2];
                            md.weight * (PI * md.freq * t + md.phase).cos()
                        })
                        .sum();
                    1.0 + amp * f
                } else {
                    1.0
                };
                if rho <= limit {
                    m.set(z, y, x, true);
                }
            }
        }
    }
    Ok(largest_component(&m))
}

/// Keep only the largest 26-connected component (lowest id on ties).
pub fn largest_component(m: &Mask) -> Mask {
    let lab = connected_components(m, Connectivity::TwentySix);
    if lab.count <= 1 {
        return m.clone();
    }
    let sizes = lab.sizes();
    let mut best = 0;
    for (i, &s) in sizes.iter().enumerate() {
        if s > sizes[best] {
            best = i;
        }
    }
    lab.component_mask(best as u32 + 1, m.spacing())
}

/// A single connected bean-shaped mask centered in the grid.
pub fn gen_kidney_shape(rng: &mut Rng, p: &ShapeParams) -> Result<Mask> {
    generate(rng, p)
}

/// As [`gen_kidney_shape`] with the bend ignored.
pub fn gen_tumor_shape(rng: &mut Rng, p: &ShapeParams) -> Result<Mask> {
    generate(rng, &ShapeParams { bend: 0.0, ..p.clone() })
}
