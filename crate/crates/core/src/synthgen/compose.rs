//! Tumor insertion and the coverage / containment acceptance test.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed::Rng;
use crate::volume::{rotate_scale_mask, translate_mask, EulerZyx, Mask};

/// `Σ k·t / Σ k`: fraction of the kidney covered by the tumor.
pub fn coverage_ratio(kidney: &Mask, tumor: &Mask) -> Result<f64> {
    let k = kidney.count();
    if k == 0 {
        return invalid("coverage ratio of an empty kidney");
    }
    Ok(kidney.overlap_count(tumor)? as f64 / k as f64)
}

/// `Σ k·t / Σ t`: fraction of the tumor lying inside the kidney.
pub fn containment_ratio(kidney: &Mask, tumor: &Mask) -> Result<f64> {
    let t = tumor.count();
    if t == 0 {
        return invalid("containment ratio of an empty tumor");
    }
    Ok(kidney.overlap_count(tumor)? as f64 / t as f64)
}

/// What the protuberance network is trained to output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// The whole inserted tumor.
    #[default]
    WholeTumor,
    /// Only the part of the tumor outside the kidney.
    Exophytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComposeLimits {
    /// Rotation about `z` is uniform in `±rotation_z` degrees.
    pub rotation_z: f64,
    /// Rotation about `x` and `y` is uniform in `±rotation_xy` degrees.
    pub rotation_xy: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Accept only if coverage is strictly below this.
    pub max_coverage: f64,
    /// Accept only if containment is strictly below this.
    pub max_containment: f64,
    /// Placements tried per shape pair.
    pub attempts: usize,
    #[serde(default)]
    pub target: TargetMode,
}

impl Default for ComposeLimits {
    fn default() -> Self {
        Self {
            rotation_z: 180.0,
            rotation_xy: 20.0,
            scale_min: 0.7,
            scale_max: 1.3,
            max_coverage: 0.3,
            max_containment: 0.95,
            attempts: 100,
            target: TargetMode::WholeTumor,
        }
    }
}

impl ComposeLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_z >= 0.0 && self.rotation_z <= 180.0 && self.rotation_xy >= 0.0 && self.rotation_xy <= 180.0) {
            return invalid("rotation limits must lie in [0, 180] degrees");
        }
        if !(self.scale_min >= 0.1 && self.scale_min <= self.scale_max && self.scale_max <= 10.0) {
            return invalid(format!("scale range [{}, {}] must lie within [0.1, 10]", self.scale_min, self.scale_max));
        }
        if !((0.0..=1.0).contains(&self.max_coverage) && (0.0..=1.0).contains(&self.max_containment)) {
            return invalid("ratio limits must lie in [0, 1]");
        }
        if self.attempts == 0 {
            return invalid("attempts must be >= 1");
        }
        Ok(())
    }
}

/// Rigid placement of the tumor: rotation and scale about its centroid,
/// then an integer shift `[dz, dy, dx]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub rotation: EulerZyx,
    pub scale: f64,
    pub offset: [i64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub rotation: EulerZyx,
    pub scale: f64,
    pub offset: [i64; 3],
    pub coverage_ratio: f64,
    pub containment_ratio: f64,
    pub seed: u64,
    /// Placements tried for this sample, including the accepted one.
    pub attempts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// `kidney ∪ tumor`.
    pub input_mask: Mask,
    pub target_mask: Mask,
    pub kidney_mask: Mask,
    /// The tumor as placed.
    pub tumor_mask: Mask,
    pub meta: SynthMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    NoOverlap,
    Coverage(f64),
    Containment(f64),
    BudgetExhausted { attempts: usize, no_overlap: usize, coverage: usize, containment: usize },
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::NoOverlap => write!(f, "no overlap"),
            Rejection::Coverage(r) => write!(f, "coverage {r:.4} too high"),
            Rejection::Containment(r) => write!(f, "containment {r:.4} too high"),
            Rejection::BudgetExhausted { attempts, no_overlap, coverage, containment } => write!(
                f,
                "budget of {attempts} exhausted ({no_overlap} no overlap, {coverage} coverage, {containment} containment)"
            ),
        }
    }
}

pub type Composition = std::result::Result<SynthSample, Rejection>;

fn check_pair(kidney: &Mask, tumor: &Mask) -> Result<()> {
    if kidney.dims() != tumor.dims() {
        return invalid(format!("kidney {:?} and tumor {:?} dims differ", kidney.dims(), tumor.dims()));
    }
    if kidney.is_empty() || tumor.is_empty() {
        return invalid("kidney and tumor masks must be nonempty");
    }
    Ok(())
}

fn judge(kidney: &Mask, placed: Mask, placement: Placement, limits: &ComposeLimits) -> Result<Composition> {
    if placed.is_empty() || kidney.overlap_count(&placed)? == 0 {
        return Ok(Err(Rejection::NoOverlap));
    }
    let coverage = coverage_ratio(kidney, &placed)?;
    if !(coverage < limits.max_coverage) {
        return Ok(Err(Rejection::Coverage(coverage)));
    }
    let containment = containment_ratio(kidney, &placed)?;
    if !(containment < limits.max_containment) {
        return Ok(Err(Rejection::Containment(containment)));
    }
    let target_mask = match limits.target {
        TargetMode::WholeTumor => placed.clone(),
        TargetMode::Exophytic => placed.difference(kidney)?,
    };
    Ok(Ok(SynthSample {
        input_mask: kidney.union(&placed)?,
        target_mask,
        kidney_mask: kidney.clone(),
        tumor_mask: placed,
        meta: SynthMeta {
            rotation: placement.rotation,
            scale: placement.scale,
            offset: placement.offset,
            coverage_ratio: coverage,
            containment_ratio: containment,
            seed: 0,
            attempts: 1,
        },
    }))
}

/// Place the tumor deterministically and apply the acceptance test.
pub fn compose_at(kidney: &Mask, tumor: &Mask, placement: Placement, limits: &ComposeLimits) -> Result<Composition> {
    check_pair(kidney, tumor)?;
    let moved = rotate_scale_mask(tumor, placement.rotation, placement.scale)?;
    judge(kidney, translate_mask(&moved, placement.offset), placement, limits)
}

fn uniform(rng: &mut Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}

/// Random placements until one passes or `limits.attempts` are used up.
///
/// The tumor centroid lands uniformly on an integer point of the kidney's
/// bounding box dilated by the equivalent-sphere radius of the tumor.
pub fn try_compose(kidney: &Mask, tumor: &Mask, rng: &mut Rng, limits: &ComposeLimits) -> Result<Composition> {
    check_pair(kidney, tumor)?;
    limits.validate()?;
    let (lo, hi) = kidney.bbox().expect("nonempty kidney");
    let dims = kidney.dims().as_array();
    let (mut no_overlap, mut coverage, mut containment) = (0, 0, 0);
    for attempt in 1..=limits.attempts {
        let rotation = EulerZyx::new(uniform(rng, limits.rotation_z), uniform(rng, limits.rotation_xy), uniform(rng, limits.rotation_xy));
        let scale = if limits.scale_min == limits.scale_max {
            limits.scale_min
        } else {
            rng.random_range(limits.scale_min..=limits.scale_max)
        };
        let moved = rotate_scale_mask(tumor, rotation, scale)?;
        let Some(c) = moved.centroid() else {
            no_overlap += 1;
            continue;
        };
        let radius = (3.0 * moved.count() as f64 / (4.0 * PI)).cbrt().ceil() as i64;
        let offset: [i64; 3] = std::array::from_fn(|k| {
            let a = (lo[k] as i64 - radius).max(0);
            let b = (hi[k] as i64 + radius).min(dims[k] as i64 - 1);
            rng.random_range(a..=b) - c[k].round() as i64
        });
        let placement = Placement { rotation, scale, offset };
        match judge(kidney, translate_mask(&moved, offset), placement, limits)? {
            Ok(mut s) => {
                s.meta.attempts = attempt as u64;
                return Ok(Ok(s));
            }
            Err(Rejection::NoOverlap) => no_overlap += 1,
            Err(Rejection::Coverage(_)) => coverage += 1,
            Err(_) => containment += 1,
        }
    }
    Ok(Err(Rejection::BudgetExhausted { attempts: limits.attempts, no_overlap, coverage, containment }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};

    fn mask_with(n: usize, count: usize, start: usize) -> Mask {
        let d = Dims::new(1, 1, n).unwrap();
        Mask::from_fn(d, Spacing::default(), |_, _, x| x >= start && x < start + count)
    }

    #[test]
    fn ratio_boundaries() {
        // kidney of 10 voxels, tumor overlapping 3
        let k = mask_with(40, 10, 0);
        let t = mask_with(40, 5, 7);
        assert_eq!(coverage_ratio(&k, &t).unwrap(), 0.3);
        // tumor of 20 voxels with 19 inside the kidney
        let k2 = mask_with(40, 30, 0);
        let t2 = mask_with(40, 20, 11);
        assert_eq!(containment_ratio(&k2, &t2).unwrap(), 0.95);
        let limits = ComposeLimits::default();
        assert!(!(0.3 < limits.max_coverage) && !(0.95 < limits.max_containment));
        let far = mask_with(40, 5, 30);
        assert_eq!(coverage_ratio(&k, &far).unwrap(), 0.0);
        assert_eq!(containment_ratio(&k, &far).unwrap(), 0.0);
        assert_eq!(coverage_ratio(&k, &mask_with(40, 12, 0)).unwrap(), 1.0);
        assert!(coverage_ratio(&mask_with(40, 0, 0), &t).is_err());
        assert!(containment_ratio(&k, &mask_with(40, 0, 0)).is_err());
    }

    fn ball(n: usize, c: [f64; 3], r: f64) -> Mask {
        Mask::from_fn(Dims::cube(n), Spacing::default(), |z, y, x| {
            let d = [z as f64 - c[0], y as f64 - c[1], x as f64 - c[2]];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r
        })
    }

    #[test]
    fn forced_placements() {
        let kidney = ball(32, [16.0; 3], 8.0);
        let tumor = ball(32, [16.0; 3], 3.0);
        let limits = ComposeLimits::default();
        let id = |offset| Placement { rotation: EulerZyx::default(), scale: 1.0, offset };
        let far = compose_at(&kidney, &tumor, id([0, 0, 14]), &limits).unwrap();
        assert_eq!(far.unwrap_err(), Rejection::NoOverlap);
        let inside = compose_at(&kidney, &tumor, id([0, 0, 0]), &limits).unwrap();
        assert!(matches!(inside.unwrap_err(), Rejection::Containment(r) if r == 1.0));
        let edge = compose_at(&kidney, &tumor, id([0, 0, 8]), &limits).unwrap().unwrap();
        assert_eq!(edge.input_mask, kidney.union(&edge.tumor_mask).unwrap());
        assert_eq!(edge.target_mask, edge.tumor_mask);
        let exo = ComposeLimits { target: TargetMode::Exophytic, ..limits };
        let e = compose_at(&kidney, &tumor, id([0, 0, 8]), &exo).unwrap().unwrap();
        assert_eq!(e.target_mask.overlap_count(&kidney).unwrap(), 0);
        assert!(e.target_mask.is_subset_of(&e.input_mask).unwrap());
    }

    #[test]
    fn big_tumor_rejected_by_coverage() {
        let kidney = ball(32, [16.0; 3], 4.0);
        let tumor = ball(32, [16.0; 3], 6.0);
        let p = Placement { rotation: EulerZyx::default(), scale: 1.0, offset: [0, 0, 3] };
        let r = compose_at(&kidney, &tumor, p, &ComposeLimits::default()).unwrap();
        assert!(matches!(r.unwrap_err(), Rejection::Coverage(_)));
    }

    #[test]
    fn budget_exhaustion_is_a_rejection() {
        let kidney = ball(32, [16.0; 3], 6.0);
        let tumor = ball(32, [16.0; 3], 3.0);
        let limits = ComposeLimits { attempts: 5, max_coverage: 0.0, ..Default::default() };
        let r = try_compose(&kidney, &tumor, &mut crate::seed::rng_from(1), &limits).unwrap();
        assert!(matches!(r, Err(Rejection::BudgetExhausted { attempts: 5, .. })));
    }
}
