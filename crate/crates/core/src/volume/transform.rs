//! Nearest-neighbor rotation, scaling and translation of masks.
//!
//! Rotations use intrinsic z-y-x Euler angles in degrees on a right-handed
//! `(x, y, z)` frame: `R = Rz(z) * Ry(y) * Rx(x)`. Both rotation and scaling
//! pivot on the foreground centroid (grid center for an empty mask). Each
//! output voxel center is pulled back through the inverse map and takes the
//! value of the nearest input voxel; samples falling outside the grid are
//! background.

use serde::{Deserialize, Serialize};

use super::{Dims, Mask};
use crate::error::{invalid, Result};

/// Euler angles in degrees, applied intrinsically about z, then y, then x.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EulerZyx {
    pub z: f64,
    pub y: f64,
    pub x: f64,
}

impl EulerZyx {
    pub fn new(z: f64, y: f64, x: f64) -> Self {
        Self { z, y, x }
    }

    pub fn is_finite(&self) -> bool {
        self.z.is_finite() && self.y.is_finite() && self.x.is_finite()
    }
}

pub type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

fn apply(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Rotation matrix acting on `[z, y, x]` coordinate vectors.
pub fn rotation_matrix(angles: EulerZyx) -> Mat3 {
    let (sz, cz) = angles.z.to_radians().sin_cos();
    let (sy, cy) = angles.y.to_radians().sin_cos();
    let (sx, cx) = angles.x.to_radians().sin_cos();
    // (x, y, z) frame
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let r = mat_mul(&mat_mul(&rz, &ry), &rx);
    // reorder rows/cols to [z, y, x]
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = r[2 - i][2 - j];
        }
    }
    out
}

/// Pull every output voxel back through `inverse` about `center` and copy the
/// nearest source value; out-of-grid samples take `fill`.
pub fn warp_nearest<V: Copy>(src: &[V], dims: Dims, center: [f64; 3], inverse: &Mat3, fill: V) -> Vec<V> {
    assert_eq!(src.len(), dims.len());
    let mut out = vec![fill; dims.len()];
    warp_region(src, &mut out, dims, center, inverse, [0, 0, 0], [dims.nz, dims.ny, dims.nx]);
    out
}

fn warp_region<V: Copy>(
    src: &[V],
    out: &mut [V],
    dims: Dims,
    center: [f64; 3],
    inverse: &Mat3,
    lo: [usize; 3],
    hi: [usize; 3],
) {
    for z in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for x in lo[2]..hi[2] {
                let d = [z as f64 - center[0], y as f64 - center[1], x as f64 - center[2]];
                let q = apply(inverse, d);
                let p = [
                    (q[0] + center[0]).round() as i64,
                    (q[1] + center[1]).round() as i64,
                    (q[2] + center[2]).round() as i64,
                ];
                if let Some(i) = dims.checked_index(p) {
                    out[dims.index(z, y, x)] = src[i];
                }
            }
        }
    }
}

/// Warp a mask with `forward`/`inverse` linear maps about `center`, visiting
/// only output voxels that can land on the source foreground.
fn warp_mask(m: &Mask, center: [f64; 3], forward: &Mat3, inverse: &Mat3) -> Mask {
    let dims = m.dims();
    let Some((blo, bhi)) = m.bbox() else {
        return Mask::empty(dims, m.spacing());
    };
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for corner in 0..8 {
        let q = [0, 1, 2].map(|k| {
            if corner >> k & 1 == 0 {
                blo[k] as f64 - 0.5
            } else {
                bhi[k] as f64 + 0.5
            }
        });
        let p = apply(forward, [q[0] - center[0], q[1] - center[1], q[2] - center[2]]);
        for k in 0..3 {
            lo[k] = lo[k].min(p[k] + center[k]);
            hi[k] = hi[k].max(p[k] + center[k]);
        }
    }
    let n = dims.as_array();
    let rlo = [0, 1, 2].map(|k| (lo[k].floor() - 1.0).clamp(0.0, n[k] as f64) as usize);
    let rhi = [0, 1, 2].map(|k| (hi[k].ceil() + 2.0).clamp(0.0, n[k] as f64) as usize);
    let mut out = vec![false; dims.len()];
    warp_region(m.data(), &mut out, dims, center, inverse, rlo, rhi);
    Mask::new(dims, m.spacing(), out).expect("same dims")
}

fn pivot(m: &Mask) -> [f64; 3] {
    m.centroid().unwrap_or_else(|| m.dims().center())
}

fn check_factor(factor: f64) -> Result<()> {
    if !(0.1..=10.0).contains(&factor) {
        return invalid(format!("scale factor must lie in [0.1, 10], got {factor}"));
    }
    Ok(())
}

pub fn rotate_mask(m: &Mask, angles: EulerZyx) -> Mask {
    let r = rotation_matrix(angles);
    warp_mask(m, pivot(m), &r, &transpose(&r))
}

pub fn scale_mask(m: &Mask, factor: f64) -> Result<Mask> {
    check_factor(factor)?;
    let fwd = [[factor, 0.0, 0.0], [0.0, factor, 0.0], [0.0, 0.0, factor]];
    let inv = fwd.map(|row| row.map(|v| if v != 0.0 { 1.0 / v } else { 0.0 }));
    Ok(warp_mask(m, pivot(m), &fwd, &inv))
}

/// Rotation followed by isotropic scaling, resampled once.
pub fn rotate_scale_mask(m: &Mask, angles: EulerZyx, factor: f64) -> Result<Mask> {
    check_factor(factor)?;
    let r = rotation_matrix(angles);
    let fwd = r.map(|row| row.map(|v| v * factor));
    let inv = transpose(&r).map(|row| row.map(|v| v / factor));
    Ok(warp_mask(m, pivot(m), &fwd, &inv))
}

/// Shift the foreground by `offset` (`[dz, dy, dx]`); voxels leaving the grid are dropped.
pub fn translate_mask(m: &Mask, offset: [i64; 3]) -> Mask {
    let dims = m.dims();
    let mut out = Mask::empty(dims, m.spacing());
    for [z, y, x] in m.voxels() {
        let p = [z as i64 + offset[0], y as i64 + offset[1], x as i64 + offset[2]];
        if let Some(i) = dims.checked_index(p) {
            let [oz, oy, ox] = dims.coords(i);
            out.set(oz, oy, ox, true);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;
    use proptest::prelude::*;

    fn sphere(n: usize, r: f64) -> Mask {
        let c = (n as f64 - 1.0) / 2.0;
        Mask::from_fn(Dims::cube(n), Spacing::default(), |z, y, x| {
            let d2 = (z as f64 - c).powi(2) + (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            d2 <= r * r
        })
    }

    #[test]
    fn zero_rotation_is_identity() {
        let m = sphere(12, 4.0);
        assert_eq!(rotate_mask(&m, EulerZyx::default()), m);
    }

    #[test]
    fn single_voxel_is_fixed_point() {
        let m = Mask::from_voxels(Dims::cube(9), Spacing::default(), &[[4, 4, 4]]).unwrap();
        for a in [EulerZyx::new(33.0, -71.0, 12.5), EulerZyx::new(180.0, 90.0, -45.0)] {
            assert_eq!(rotate_mask(&m, a), m);
        }
        // off-center voxel pivots on itself as well
        let m = Mask::from_voxels(Dims::cube(9), Spacing::default(), &[[1, 7, 2]]).unwrap();
        assert_eq!(rotate_mask(&m, EulerZyx::new(57.0, 11.0, 3.0)), m);
    }

    #[test]
    fn bar_rotated_about_z_matches_index_permutation() {
        // bar along x through (z=5, y=5), x in 2..=8; centroid (5, 5, 5)
        let dims = Dims::cube(11);
        let s = Spacing::default();
        let bar = Mask::from_fn(dims, s, |z, y, x| z == 5 && y == 5 && (2..=8).contains(&x));
        let rotated = rotate_mask(&bar, EulerZyx::new(90.0, 0.0, 0.0));
        // oracle: +90° about z sends (x, y) -> (c - (y - c), c + (x - c))
        let c = 5i64;
        let mut want = Mask::empty(dims, s);
        for [z, y, x] in bar.voxels() {
            let (x, y) = (x as i64, y as i64);
            let nx = c - (y - c);
            let ny = c + (x - c);
            want.set(z, ny as usize, nx as usize, true);
        }
        assert_eq!(rotated, want);
        let (lo, hi) = rotated.bbox().unwrap();
        assert_eq!((hi[1] - lo[1], hi[2] - lo[2]), (6, 0));
    }

    #[test]
    fn scale_identity_and_errors() {
        let m = sphere(10, 3.0);
        assert_eq!(scale_mask(&m, 1.0).unwrap(), m);
        assert!(scale_mask(&m, 0.05).is_err());
        assert!(scale_mask(&m, 11.0).is_err());
    }

    #[test]
    fn half_scale_sphere_volume_ratio() {
        let m = sphere(24, 6.0);
        let s = scale_mask(&m, 0.5).unwrap();
        let ratio = s.count() as f64 / m.count() as f64;
        assert!((ratio - 0.125).abs() <= 0.2 * 0.125, "ratio {ratio}");
    }

    #[test]
    fn scaling_past_the_edge_clips() {
        // bar touching the x = 0 face, scaled x3 about its centroid
        let dims = Dims::cube(10);
        let bar = Mask::from_fn(dims, Spacing::default(), |z, y, x| z == 5 && y == 5 && x < 4);
        let s = scale_mask(&bar, 3.0).unwrap();
        assert!(s.get(5, 5, 0));
        assert!(s.count() > bar.count());
        assert!(s.count() < 3 * 3 * 3 * bar.count());
    }

    #[test]
    fn translate_examples() {
        let dims = Dims::cube(5);
        let s = Spacing::default();
        let m = Mask::from_voxels(dims, s, &[[1, 1, 1]]).unwrap();
        assert_eq!(translate_mask(&m, [0, 0, 0]), m);
        let moved = translate_mask(&m, [2, 0, 0]);
        assert_eq!(moved.voxels().collect::<Vec<_>>(), vec![[3, 1, 1]]);
        let edge = Mask::from_voxels(dims, s, &[[4, 0, 0]]).unwrap();
        assert!(translate_mask(&edge, [1, 0, 0]).is_empty());
    }

    #[test]
    fn restricted_region_equals_full_warp() {
        let m = sphere(16, 4.0);
        let a = EulerZyx::new(37.0, 14.0, -9.0);
        let r = rotation_matrix(a);
        let full = warp_nearest(m.data(), m.dims(), pivot(&m), &transpose(&r), false);
        assert_eq!(rotate_mask(&m, a).data(), &full[..]);
    }

    proptest! {
        #[test]
        fn identity_transforms_are_bit_exact(bits in prop::collection::vec(any::<bool>(), 216)) {
            let m = Mask::new(Dims::cube(6), Spacing::default(), bits).unwrap();
            prop_assert_eq!(&rotate_mask(&m, EulerZyx::default()), &m);
            prop_assert_eq!(&scale_mask(&m, 1.0).unwrap(), &m);
            prop_assert_eq!(&translate_mask(&m, [0, 0, 0]), &m);
        }
    }
}
