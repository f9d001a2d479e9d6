//! Dense 3D grids: scalar [`Volume`]s, binary [`Mask`]s and the geometric
//! and filtering primitives used by every other module.
//!
//! Voxel order is fixed: `x` varies fastest, then `y`, then `z`, so the flat
//! index of `(z, y, x)` is `(z * ny + y) * nx + x`. Coordinates are always
//! given in `[z, y, x]` order.

mod components;
mod filter;
pub mod pvol;
mod transform;

pub use components::{connected_components, Connectivity, Labeling};
pub use filter::{crop, crop_mask, crop_padded, gaussian_blur, gaussian_kernel, resample, resample_mask};
pub use transform::{
    rotate_mask, rotate_scale_mask, rotation_matrix, scale_mask, translate_mask, warp_nearest,
    EulerZyx, Mat3,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Voxel counts along `z`, `y`, `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nz: usize,
    pub ny: usize,
    pub nx: usize,
}

impl Dims {
    pub fn new(nz: usize, ny: usize, nx: usize) -> Result<Self> {
        if nz == 0 || ny == 0 || nx == 0 {
            return invalid(format!("dims must be >= 1, got ({nz}, {ny}, {nx})"));
        }
        Ok(Self { nz, ny, nx })
    }

    pub fn cube(n: usize) -> Self {
        assert!(n >= 1, "cube side must be >= 1");
        Self { nz: n, ny: n, nx: n }
    }

    pub fn len(&self) -> usize {
        self.nz * self.ny * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nz, self.ny, self.nx]
    }

    pub fn from_array(a: [usize; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        debug_assert!(z < self.nz && y < self.ny && x < self.nx);
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        let z = i / (self.nx * self.ny);
        [z, y, x]
    }

    /// Flat index of a signed coordinate, or `None` outside the grid.
    #[inline]
    pub fn checked_index(&self, p: [i64; 3]) -> Option<usize> {
        if p[0] < 0 || p[1] < 0 || p[2] < 0 {
            return None;
        }
        let (z, y, x) = (p[0] as usize, p[1] as usize, p[2] as usize);
        if z >= self.nz || y >= self.ny || x >= self.nx {
            return None;
        }
        Some(self.index(z, y, x))
    }

    /// Geometric center in voxel coordinates.
    pub fn center(&self) -> [f64; 3] {
        [
            (self.nz as f64 - 1.0) / 2.0,
            (self.ny as f64 - 1.0) / 2.0,
            (self.nx as f64 - 1.0) / 2.0,
        ]
    }
}

/// Millimetres per voxel along `z`, `y`, `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub z: f32,
    pub y: f32,
    pub x: f32,
}

impl Spacing {
    pub fn new(z: f32, y: f32, x: f32) -> Result<Self> {
        let s = Self { z, y, x };
        s.validate()?;
        Ok(s)
    }

    pub fn iso(s: f32) -> Self {
        Self { z: s, y: s, x: s }
    }

    pub fn as_array(&self) -> [f32; 3] {
        [self.z, self.y, self.x]
    }

    fn validate(&self) -> Result<()> {
        for s in self.as_array() {
            if !(s.is_finite() && s > 0.0) {
                return invalid(format!("spacing must be finite and > 0, got {s}"));
            }
        }
        Ok(())
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self::iso(1.0)
    }
}

/// Dense scalar grid: images, probability maps, blurred masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    spacing: Spacing,
    data: Vec<T>,
}

impl<T: Scalar> Volume<T> {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        Dims::new(dims.nz, dims.ny, dims.nx)?;
        spacing.validate()?;
        if data.len() != dims.len() {
            return invalid(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            ));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: T) -> Self {
        Self { dims, spacing, data: vec![value; dims.len()] }
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Self {
        Self::filled(dims, spacing, T::zero())
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(z, y, x));
                }
            }
        }
        Self { dims, spacing, data }
    }

    /// Mask voxels become 1, background 0.
    pub fn from_mask(m: &Mask) -> Self {
        let data = m.data().iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        Self { dims: m.dims(), spacing: m.spacing(), data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.dims.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: T) {
        let i = self.dims.index(z, y, x);
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| U::from(v).expect("cast")).collect(),
        }
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = spacing;
        self
    }

    /// Voxels strictly above `t` become foreground.
    pub fn threshold(&self, t: T) -> Mask {
        Mask {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| v > t).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense binary grid (kidney, tumor and protuberance labels).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    dims: Dims,
    spacing: Spacing,
    data: Vec<bool>,
}

// Spacing holds floats, so Eq/Hash are asserted over validated (finite) values only.
impl Eq for Spacing {}
impl std::hash::Hash for Spacing {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        for s in self.as_array() {
            s.to_bits().hash(state);
        }
    }
}

impl Mask {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<bool>) -> Result<Self> {
        Dims::new(dims.nz, dims.ny, dims.nx)?;
        spacing.validate()?;
        if data.len() != dims.len() {
            return invalid(format!(
                "mask length {} does not match dims {:?}",
                data.len(),
                dims
            ));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Self {
        Self { dims, spacing, data: vec![false; dims.len()] }
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(z, y, x));
                }
            }
        }
        Self { dims, spacing, data }
    }

    /// Build a mask from explicit foreground coordinates.
    pub fn from_voxels(dims: Dims, spacing: Spacing, voxels: &[[usize; 3]]) -> Result<Self> {
        let mut m = Self::empty(dims, spacing);
        for &[z, y, x] in voxels {
            if z >= dims.nz || y >= dims.ny || x >= dims.nx {
                return invalid(format!("voxel ({z}, {y}, {x}) outside {dims:?}"));
            }
            m.set(z, y, x, true);
        }
        Ok(m)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn with_spacing(mut self, spacing: Spacing) -> Self {
        self.spacing = spacing;
        self
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.dims.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: bool) {
        let i = self.dims.index(z, y, x);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    fn check_same(&self, other: &Mask) -> Result<()> {
        if self.dims != other.dims {
            return invalid(format!("mask dims differ: {:?} vs {:?}", self.dims, other.dims));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        self.check_same(other)?;
        Ok(Mask {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Voxels in `self` but not in `other`.
    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && !b)
    }

    /// `|self ∩ other|` without materializing the intersection.
    pub fn overlap_count(&self, other: &Mask) -> Result<usize> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count())
    }

    pub fn is_subset_of(&self, other: &Mask) -> Result<bool> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b))
    }

    /// Mean foreground coordinate `[z, y, x]`, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<[f64; 3]> {
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for (i, &b) in self.data.iter().enumerate() {
            if b {
                let c = self.dims.coords(i);
                for k in 0..3 {
                    acc[k] += c[k] as f64;
                }
                n += 1;
            }
        }
        (n > 0).then(|| acc.map(|a| a / n as f64))
    }

    /// Inclusive foreground bounding box `(min, max)`.
    pub fn bbox(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, &b) in self.data.iter().enumerate() {
            if b {
                let c = self.dims.coords(i);
                for k in 0..3 {
                    lo[k] = lo[k].min(c[k]);
                    hi[k] = hi[k].max(c[k]);
                }
                any = true;
            }
        }
        any.then_some((lo, hi))
    }

    pub fn voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| self.dims.coords(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(n: usize) -> Dims {
        Dims::cube(n)
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Dims::new(0, 1, 1).is_err());
        assert!(Spacing::new(1.0, 0.0, 1.0).is_err());
        assert!(Volume::<f32>::new(d(2), Spacing::default(), vec![0.0; 7]).is_err());
        assert!(Mask::new(d(2), Spacing::default(), vec![false; 9]).is_err());
    }

    #[test]
    fn x_is_fastest() {
        let dims = Dims::new(2, 3, 4).unwrap();
        assert_eq!(dims.index(0, 0, 1), 1);
        assert_eq!(dims.index(0, 1, 0), 4);
        assert_eq!(dims.index(1, 0, 0), 12);
        assert_eq!(dims.coords(23), [1, 2, 3]);
    }

    #[test]
    fn set_algebra_examples() {
        let s = Spacing::default();
        let a = Mask::from_voxels(d(4), s, &[[0, 0, 0]]).unwrap();
        let b = Mask::from_voxels(d(4), s, &[[3, 3, 3]]).unwrap();
        let e = Mask::empty(d(4), s);
        assert_eq!(a.union(&e).unwrap(), a);
        assert_eq!(a.intersection(&a).unwrap(), a);
        assert_eq!(a.union(&b).unwrap().count(), 2);
        assert_eq!(a.intersection(&b).unwrap().count(), 0);
        assert!(a.union(&Mask::empty(d(3), s)).is_err());
    }

    fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
        (prop::collection::vec(any::<bool>(), 125), prop::collection::vec(any::<bool>(), 125)).prop_map(
            |(a, b)| {
                let s = Spacing::default();
                (Mask::new(d(5), s, a).unwrap(), Mask::new(d(5), s, b).unwrap())
            },
        )
    }

    proptest! {
        #[test]
        fn inclusion_exclusion((a, b) in mask_pair()) {
            let u = a.union(&b).unwrap().count();
            let i = a.intersection(&b).unwrap().count();
            prop_assert_eq!(u + i, a.count() + b.count());
            prop_assert_eq!(i, a.overlap_count(&b).unwrap());
        }
    }
}
