use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::volume::{Dims, Volume};

/// `(batch, channels, nz, ny, nx)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, z: usize, y: usize, x: usize) -> Self {
        Self { n, c, z, y, x }
    }

    pub fn scalar() -> Self {
        Self::new(1, 1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.spatial_len()
    }

    pub fn spatial_len(&self) -> usize {
        self.z * self.y * self.x
    }

    /// Elements per batch item.
    pub fn sample_len(&self) -> usize {
        self.c * self.spatial_len()
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.z, self.y, self.x]
    }

    pub fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub fn with_spatial(self, s: [usize; 3]) -> Self {
        Self { z: s[0], y: s[1], x: s[2], ..self }
    }
}

/// Dense row-major 5D tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return invalid(format!("tensor data length {} != numel of {shape:?}", data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![T::zero(); shape.numel()] }
    }

    pub fn filled(shape: Shape, v: T) -> Self {
        Self { shape, data: vec![v; shape.numel()] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: Shape::scalar(), data: vec![v] }
    }

    /// Stack single-channel volumes into a `(n, 1, z, y, x)` batch.
    pub fn from_volumes(vols: &[&Volume<T>]) -> Result<Self> {
        let Some(first) = vols.first() else {
            return invalid("cannot build a tensor from zero volumes");
        };
        let d = first.dims();
        let mut data = Vec::with_capacity(vols.len() * d.len());
        for v in vols {
            if v.dims() != d {
                return invalid("volumes in a batch must share dims");
            }
            data.extend_from_slice(v.data());
        }
        Ok(Self { shape: Shape::new(vols.len(), 1, d.nz, d.ny, d.nx), data })
    }

    /// Channel `c` of batch item `n` as a volume with unit spacing.
    pub fn volume(&self, n: usize, c: usize) -> Volume<T> {
        let s = self.shape;
        let len = s.spatial_len();
        let off = (n * s.c + c) * len;
        Volume::new(Dims { nz: s.z, ny: s.y, nx: s.x }, Default::default(), self.data[off..off + len].to_vec())
            .expect("tensor spatial dims")
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| U::from(v).expect("cast")).collect() }
    }
}
