//! Gaussian blur, spacing resampling and zero-padded cropping.

use super::{Dims, Mask, Spacing, Volume};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// 1D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`, normalized to sum 1.
/// `sigma == 0` yields the single tap `[1]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable isotropic Gaussian blur (σ in voxels). Taps falling outside the
/// grid are dropped and the remaining weights renormalized, so constants are
/// preserved up to the boundary.
pub fn gaussian_blur<T: Scalar>(v: &Volume<T>, sigma: f64) -> Result<Volume<T>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return invalid(format!("sigma must be finite and >= 0, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let k: Vec<T> = gaussian_kernel(sigma).into_iter().map(T::lit).collect();
    let dims = v.dims();
    let mut data = v.data().to_vec();
    for axis in 0..3 {
        data = blur_axis(&data, dims, axis, &k);
    }
    Volume::new(dims, v.spacing(), data)
}

fn axis_geometry(dims: Dims, axis: usize) -> (usize, usize) {
    // (length along axis, stride of axis)
    match axis {
        0 => (dims.nz, dims.ny * dims.nx),
        1 => (dims.ny, dims.nx),
        _ => (dims.nx, 1),
    }
}

fn blur_axis<T: Scalar>(src: &[T], dims: Dims, axis: usize, k: &[T]) -> Vec<T> {
    let (n, stride) = axis_geometry(dims, axis);
    let r = (k.len() / 2) as i64;
    let mut out = vec![T::zero(); src.len()];
    for base in line_starts(dims, axis) {
        for i in 0..n as i64 {
            let mut acc = T::zero();
            let mut wsum = T::zero();
            for (t, &w) in k.iter().enumerate() {
                let j = i + t as i64 - r;
                if j < 0 || j >= n as i64 {
                    continue;
                }
                acc += w * src[base + j as usize * stride];
                wsum += w;
            }
            out[base + i as usize * stride] = acc / wsum;
        }
    }
    out
}

/// Flat index of the first voxel on every line parallel to `axis`.
fn line_starts(dims: Dims, axis: usize) -> impl Iterator<Item = usize> {
    let (nz, ny, nx) = (dims.nz, dims.ny, dims.nx);
    let (a, b) = match axis {
        0 => (ny, nx),
        1 => (nz, nx),
        _ => (nz, ny),
    };
    (0..a * b).map(move |t| {
        let (p, q) = (t / b, t % b);
        match axis {
            0 => p * nx + q,
            1 => (p * ny) * nx + q,
            _ => (p * ny + q) * nx,
        }
    })
}

fn resampled_dims(dims: Dims, from: Spacing, to: Spacing) -> Dims {
    let n = dims.as_array();
    let f = from.as_array();
    let t = to.as_array();
    let m = [0, 1, 2].map(|k| ((n[k] as f64 * f[k] as f64 / t[k] as f64).round() as usize).max(1));
    Dims { nz: m[0], ny: m[1], nx: m[2] }
}

/// Source coordinate of output voxel `i` when mapping voxel centers, clamped
/// to the source extent.
fn source_coord(i: usize, ratio: f64, n_src: usize) -> f64 {
    ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_src - 1) as f64)
}

/// Trilinear resampling to `target` spacing. New dims are
/// `round(old_dims * old_spacing / target)`, at least 1.
pub fn resample<T: Scalar>(v: &Volume<T>, target: Spacing) -> Result<Volume<T>> {
    Spacing::new(target.z, target.y, target.x)?;
    let src_dims = v.dims();
    let out_dims = resampled_dims(src_dims, v.spacing(), target);
    let ratios = [0, 1, 2].map(|k| target.as_array()[k] as f64 / v.spacing().as_array()[k] as f64);
    let mut cur = v.data().to_vec();
    let mut cur_dims = src_dims;
    for axis in 0..3 {
        let (cur_n, next_dims) = match axis {
            0 => (cur_dims.nz, Dims { nz: out_dims.nz, ..cur_dims }),
            1 => (cur_dims.ny, Dims { ny: out_dims.ny, ..cur_dims }),
            _ => (cur_dims.nx, Dims { nx: out_dims.nx, ..cur_dims }),
        };
        let out_n = next_dims.as_array()[axis];
        let taps: Vec<(usize, usize, T)> = (0..out_n)
            .map(|i| {
                let c = source_coord(i, ratios[axis], cur_n);
                let lo = c.floor() as usize;
                let hi = (lo + 1).min(cur_n - 1);
                (lo, hi, T::lit(c - lo as f64))
            })
            .collect();
        let mut next = vec![T::zero(); next_dims.len()];
        for z in 0..next_dims.nz {
            for y in 0..next_dims.ny {
                for x in 0..next_dims.nx {
                    let o = [z, y, x];
                    let (lo, hi, w) = taps[o[axis]];
                    let mut a = o;
                    a[axis] = lo;
                    let mut b = o;
                    b[axis] = hi;
                    let va = cur[cur_dims.index(a[0], a[1], a[2])];
                    let vb = cur[cur_dims.index(b[0], b[1], b[2])];
                    // lerp form keeps constants exact
                    next[next_dims.index(z, y, x)] = va + w * (vb - va);
                }
            }
        }
        cur = next;
        cur_dims = next_dims;
    }
    Volume::new(out_dims, target, cur)
}

/// Nearest-neighbor resampling of a mask to `target` spacing.
pub fn resample_mask(m: &Mask, target: Spacing) -> Result<Mask> {
    Spacing::new(target.z, target.y, target.x)?;
    let src = m.dims();
    let out_dims = resampled_dims(src, m.spacing(), target);
    let n = src.as_array();
    let ratios = [0, 1, 2].map(|k| target.as_array()[k] as f64 / m.spacing().as_array()[k] as f64);
    let idx: Vec<Vec<usize>> = (0..3)
        .map(|k| {
            (0..out_dims.as_array()[k])
                .map(|i| source_coord(i, ratios[k], n[k]).round() as usize)
                .collect()
        })
        .collect();
    Ok(Mask::from_fn(out_dims, target, |z, y, x| m.get(idx[0][z], idx[1][y], idx[2][x])))
}

fn crop_indices(dims: Dims, origin: [i64; 3], size: Dims) -> Result<()> {
    let n = dims.as_array();
    let s = size.as_array();
    for k in 0..3 {
        if s[k] == 0 {
            return invalid("crop size must be >= 1 along every axis");
        }
        let end = origin[k] + s[k] as i64;
        if end <= 0 || origin[k] >= n[k] as i64 {
            return invalid(format!(
                "crop box origin {origin:?} size {s:?} does not intersect grid {n:?}"
            ));
        }
    }
    Ok(())
}

fn crop_with<V: Copy>(src: &[V], dims: Dims, origin: [i64; 3], size: Dims, pad: V) -> Vec<V> {
    let mut out = Vec::with_capacity(size.len());
    for z in 0..size.nz {
        for y in 0..size.ny {
            for x in 0..size.nx {
                let p = [origin[0] + z as i64, origin[1] + y as i64, origin[2] + x as i64];
                out.push(dims.checked_index(p).map_or(pad, |i| src[i]));
            }
        }
    }
    out
}

/// Sub-grid of `size` starting at `origin` (`[z, y, x]`, may be negative).
/// Voxels outside the source read as 0; the box must overlap the grid.
pub fn crop<T: Scalar>(v: &Volume<T>, origin: [i64; 3], size: Dims) -> Result<Volume<T>> {
    crop_padded(v, origin, size, T::zero())
}

/// As [`crop`] with voxels outside the source reading as `pad`.
pub fn crop_padded<T: Scalar>(v: &Volume<T>, origin: [i64; 3], size: Dims, pad: T) -> Result<Volume<T>> {
    crop_indices(v.dims(), origin, size)?;
    Volume::new(size, v.spacing(), crop_with(v.data(), v.dims(), origin, size, pad))
}

pub fn crop_mask(m: &Mask, origin: [i64; 3], size: Dims) -> Result<Mask> {
    crop_indices(m.dims(), origin, size)?;
    Mask::new(size, m.spacing(), crop_with(m.data(), m.dims(), origin, size, false))
}
