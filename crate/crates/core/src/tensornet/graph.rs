//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its forward value and enough
//! context to run its backward rule. [`Graph::backward`] walks the tape in
//! reverse, accumulating gradients for nodes that require them.

use rayon::prelude::*;

use super::kernels::{self, ConvGeom};
use super::tensor::{Shape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside the tape (losses use this).
pub trait Function<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian products for each input; `None` where `needs[i]` is false.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<u32> },
    Upsample { x: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Clamp01 { x: Var },
    Concat { a: Var, b: Var },
    Slice { x: Var, start: usize },
    WeightedSum { terms: Vec<(Var, T)> },
    Custom { inputs: Vec<Var>, f: Box<dyn Function<T>> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is collected when `requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Fail with a numeric fault naming `what` if `v` holds NaN or infinity.
    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NumericFault(format!("non-finite values after {what}")))
        }
    }

    /// "Same"-padded cubic convolution. `w` has shape `(cout, cin, k, k, k)`,
    /// `b` has shape `(cout, 1, 1, 1, 1)`; stride is 1 or 2.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let bs = self.shape(b);
        if !(stride == 1 || stride == 2) {
            return invalid(format!("conv stride must be 1 or 2, got {stride}"));
        }
        if ws.c != xs.c {
            return invalid(format!("conv expects {} input channels, got {}", ws.c, xs.c));
        }
        if ws.z != ws.y || ws.y != ws.x || ws.z % 2 == 0 {
            return invalid(format!("conv kernel must be cubic with odd extent, got {ws:?}"));
        }
        if bs.numel() != ws.n {
            return invalid(format!("conv bias has {} entries for {} outputs", bs.numel(), ws.n));
        }
        if stride == 2 && xs.spatial().iter().any(|n| n % 2 != 0) {
            return invalid(format!("stride-2 conv needs even spatial dims, got {:?}", xs.spatial()));
        }
        let geom = ConvGeom::new(xs.c, ws.n, ws.z, stride, xs.spatial());
        let out_shape = Shape::new(xs.n, ws.n, geom.output[0], geom.output[1], geom.output[2]);
        let mut out = vec![T::zero(); out_shape.numel()];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            let in_len = xs.sample_len();
            out.par_chunks_mut(out_shape.sample_len()).enumerate().for_each(|(i, o)| {
                kernels::conv_forward(&geom, &xv[i * in_len..(i + 1) * in_len], wv, bv, o);
            });
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Conv { x, w, b, geom }, rg))
    }

    /// 2×2×2 max pooling with stride 2.
    pub fn maxpool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.spatial().iter().any(|n| n % 2 != 0) {
            return invalid(format!("maxpool needs even spatial dims, got {:?}", xs.spatial()));
        }
        let out_shape = xs.with_spatial(xs.spatial().map(|n| n / 2));
        let mut out = vec![T::zero(); out_shape.numel()];
        let mut argmax = vec![0u32; out_shape.numel()];
        let xv = self.value(x).data();
        let per = out_shape.sample_len();
        out.par_chunks_mut(per).zip(argmax.par_chunks_mut(per)).enumerate().for_each(|(i, (o, a))| {
            let xi = &xv[i * xs.sample_len()..(i + 1) * xs.sample_len()];
            kernels::maxpool_forward(xs.c, xs.spatial(), xi, o, a);
        });
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Trilinear ×2 upsampling (align-corners off, border clamped).
    pub fn upsample(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let out_shape = xs.with_spatial(xs.spatial().map(|n| n * 2));
        let xv = self.value(x).data();
        let len = xs.spatial_len();
        let out: Vec<T> = (0..xs.n * xs.c)
            .into_par_iter()
            .flat_map_iter(|ch| kernels::upsample_forward(xs.spatial(), &xv[ch * len..(ch + 1) * len]))
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Upsample { x }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let t = Tensor::new(t.shape(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Relu { x }, rg)
    }

    /// Logistic sigmoid, clamped to `[ε, 1 − ε]` (machine ε) so outputs stay
    /// strictly inside `(0, 1)` at any precision.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let eps = T::epsilon();
        let hi = T::one() - eps;
        let t = self.value(x);
        let out = t
            .data()
            .iter()
            .map(|&v| {
                let s = if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                };
                s.max(eps).min(hi)
            })
            .collect();
        let t = Tensor::new(t.shape(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return invalid(format!("add shape mismatch {sa:?} vs {sb:?}"));
        }
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p + q).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(sa, out)?, Op::Add { a, b }, rg))
    }

    /// Clip to `[0, 1]`; gradient passes only where the input is strictly inside.
    pub fn clamp01(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v.max(T::zero()).min(T::one())).collect();
        let t = Tensor::new(t.shape(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Clamp01 { x }, rg)
    }

    /// Stack `a` and `b` along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.spatial() != sb.spatial() {
            return invalid(format!("concat needs matching batch/spatial dims: {sa:?} vs {sb:?}"));
        }
        let out_shape = sa.with_channels(sa.c + sb.c);
        let (la, lb) = (sa.sample_len(), sb.sample_len());
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(out_shape.numel());
        for i in 0..sa.n {
            out.extend_from_slice(&va[i * la..(i + 1) * la]);
            out.extend_from_slice(&vb[i * lb..(i + 1) * lb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Concat { a, b }, rg))
    }

    /// Channels `start .. start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x);
        if len == 0 || start + len > xs.c {
            return invalid(format!("channel slice {start}..{} out of range for {} channels", start + len, xs.c));
        }
        let out_shape = xs.with_channels(len);
        let sl = xs.spatial_len();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(out_shape.numel());
        for i in 0..xs.n {
            let off = (i * xs.c + start) * sl;
            out.extend_from_slice(&xv[off..off + len * sl]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Slice { x, start }, rg))
    }

    /// `Σ wᵢ·sᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut s = T::zero();
        for &(v, w) in terms {
            if self.shape(v).numel() != 1 {
                return invalid("weighted_sum expects scalar terms");
            }
            s += w * self.value(v).item();
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { terms: terms.to_vec() }, rg))
    }

    /// Record an externally computed value with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, f: Box<dyn Function<T>>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(value, Op::Custom { inputs: inputs.to_vec(), f }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss).numel() != 1 {
            return invalid("backward needs a scalar loss");
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let xt = self.value(*x);
                let wt = self.value(*w).data();
                let xs = xt.shape();
                let (need_x, need_w, need_b) = (self.rg(*x), self.rg(*w), self.rg(*b));
                let in_len = xs.sample_len();
                let out_len = geom.cout * geom.out_len();
                let wlen = wt.len();
                let per_sample: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..xs.n)
                    .into_par_iter()
                    .map(|i| {
                        let xi = &xt.data()[i * in_len..(i + 1) * in_len];
                        let gi = &g[i * out_len..(i + 1) * out_len];
                        let mut dw = if need_w { vec![T::zero(); wlen] } else { Vec::new() };
                        let mut db = if need_b { vec![T::zero(); geom.cout] } else { Vec::new() };
                        let mut dx = if need_x { vec![T::zero(); in_len] } else { Vec::new() };
                        kernels::conv_backward(
                            geom,
                            xi,
                            wt,
                            gi,
                            need_w.then_some(&mut dw[..]),
                            need_b.then_some(&mut db[..]),
                            need_x.then_some(&mut dx[..]),
                        );
                        (dw, db, dx)
                    })
                    .collect();
                // fixed-order reduction keeps results independent of thread count
                if need_w {
                    let mut acc = vec![T::zero(); wlen];
                    for (dw, _, _) in &per_sample {
                        for (a, &v) in acc.iter_mut().zip(dw) {
                            *a += v;
                        }
                    }
                    accumulate(&mut grads[w.0], acc);
                }
                if need_b {
                    let mut acc = vec![T::zero(); geom.cout];
                    for (_, db, _) in &per_sample {
                        for (a, &v) in acc.iter_mut().zip(db) {
                            *a += v;
                        }
                    }
                    accumulate(&mut grads[b.0], acc);
                }
                if need_x {
                    let dx: Vec<T> = per_sample.into_iter().flat_map(|(_, _, dx)| dx).collect();
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::MaxPool { x, argmax } => {
                if !self.rg(*x) {
                    return;
                }
                let xs = self.shape(*x);
                let mut dx = vec![T::zero(); xs.numel()];
                let (il, ol) = (xs.sample_len(), xs.sample_len() / 8);
                dx.par_chunks_mut(il).enumerate().for_each(|(i, d)| {
                    kernels::maxpool_backward(xs.c, xs.spatial(), &argmax[i * ol..(i + 1) * ol], &g[i * ol..(i + 1) * ol], d);
                });
                accumulate(&mut grads[x.0], dx);
            }
            Op::Upsample { x } => {
                if !self.rg(*x) {
                    return;
                }
                let xs = self.shape(*x);
                let ol = xs.spatial_len() * 8;
                let dx: Vec<T> = (0..xs.n * xs.c)
                    .into_par_iter()
                    .flat_map_iter(|ch| kernels::upsample_backward(xs.spatial(), &g[ch * ol..(ch + 1) * ol]))
                    .collect();
                accumulate(&mut grads[x.0], dx);
            }
            Op::Relu { x } => {
                if !self.rg(*x) {
                    return;
                }
                let xv = self.value(*x).data();
                let dx = xv.iter().zip(g).map(|(&v, &d)| if v > T::zero() { d } else { T::zero() }).collect();
                accumulate(&mut grads[x.0], dx);
            }
            Op::Sigmoid { x } => {
                if !self.rg(*x) {
                    return;
                }
                let s = node.value.data();
                let dx = s.iter().zip(g).map(|(&s, &d)| d * s * (T::one() - s)).collect();
                accumulate(&mut grads[x.0], dx);
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], g.to_vec());
                }
            }
            Op::Clamp01 { x } => {
                if !self.rg(*x) {
                    return;
                }
                let xv = self.value(*x).data();
                let dx = xv
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if v > T::zero() && v < T::one() { d } else { T::zero() })
                    .collect();
                accumulate(&mut grads[x.0], dx);
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (la, lb) = (sa.sample_len(), sb.sample_len());
                if self.rg(*a) {
                    let da = (0..sa.n).flat_map(|i| g[i * (la + lb)..i * (la + lb) + la].iter().copied()).collect();
                    accumulate(&mut grads[a.0], da);
                }
                if self.rg(*b) {
                    let db = (0..sa.n)
                        .flat_map(|i| g[i * (la + lb) + la..(i + 1) * (la + lb)].iter().copied())
                        .collect();
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::Slice { x, start } => {
                if !self.rg(*x) {
                    return;
                }
                let xs = self.shape(*x);
                let os = node.value.shape();
                let sl = xs.spatial_len();
                let mut dx = vec![T::zero(); xs.numel()];
                for i in 0..xs.n {
                    let dst = (i * xs.c + start) * sl;
                    let src = i * os.sample_len();
                    dx[dst..dst + os.sample_len()].copy_from_slice(&g[src..src + os.sample_len()]);
                }
                accumulate(&mut grads[x.0], dx);
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    if self.rg(v) {
                        accumulate(&mut grads[v.0], vec![w * g[0]]);
                    }
                }
            }
            Op::Custom { inputs, f } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.rg(v)).collect();
                let gs = f.backward(&vals, &node.value, g, &needs);
                for ((&v, gi), need) in inputs.iter().zip(gs).zip(needs) {
                    if let (Some(gi), true) = (gi, need) {
                        accumulate(&mut grads[v.0], gi);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::new(shape, (0..shape.numel()).map(f).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::<f64>::new();
        let s = Shape::new(2, 1, 3, 4, 5);
        let x = g.input(t(s, |i| i as f64 * 0.1));
        let w = g.input(Tensor::filled(Shape::new(1, 1, 1, 1, 1), 1.0));
        let b = g.input(Tensor::zeros(Shape::new(1, 1, 1, 1, 1)));
        let y = g.conv3d(x, w, b, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn ones_kernel_on_impulse_gives_block() {
        let mut g = Graph::<f64>::new();
        let s = Shape::new(1, 1, 7, 7, 7);
        let x = g.input(t(s, |i| if i == (3 * 7 + 3) * 7 + 3 { 1.0 } else { 0.0 }));
        let w = g.input(Tensor::filled(Shape::new(1, 1, 3, 3, 3), 1.0));
        let b = g.input(Tensor::zeros(Shape::new(1, 1, 1, 1, 1)));
        let y = g.conv3d(x, w, b, 1).unwrap();
        let v = g.value(y).volume(0, 0);
        for z in 0..7 {
            for yy in 0..7 {
                for xx in 0..7 {
                    let inside = (2..=4).contains(&z) && (2..=4).contains(&yy) && (2..=4).contains(&xx);
                    assert_eq!(v.get(z, yy, xx), if inside { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn stride_two_halves_and_validates() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(Shape::new(1, 2, 4, 6, 8)));
        let w = g.input(Tensor::zeros(Shape::new(3, 2, 3, 3, 3)));
        let b = g.input(Tensor::zeros(Shape::new(3, 1, 1, 1, 1)));
        let y = g.conv3d(x, w, b, 2).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 3, 2, 3, 4));
        let bad_w = g.input(Tensor::zeros(Shape::new(3, 5, 3, 3, 3)));
        assert!(g.conv3d(x, bad_w, b, 1).is_err());
        let odd = g.input(Tensor::zeros(Shape::new(1, 2, 3, 4, 4)));
        assert!(g.conv3d(odd, w, b, 2).is_err());
        assert!(g.maxpool(odd).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let mut g = Graph::<f64>::new();
        let c = g.input(Tensor::filled(Shape::new(1, 1, 4, 4, 4), 0.3));
        let p = g.maxpool(c).unwrap();
        assert!(g.value(p).data().iter().all(|&v| v == 0.3));
        let ramp = g.input(t(Shape::new(1, 1, 4, 4, 4), |i| i as f64));
        let p = g.maxpool(ramp).unwrap();
        // window maximum of an increasing ramp is its far corner
        assert_eq!(g.value(p).data(), &[21.0, 23.0, 29.0, 31.0, 53.0, 55.0, 61.0, 63.0]);
    }

    #[test]
    fn upsample_examples() {
        let mut g = Graph::<f64>::new();
        let c = g.input(Tensor::filled(Shape::new(1, 2, 2, 3, 1), 1.5));
        let u = g.upsample(c).unwrap();
        assert_eq!(g.shape(u), Shape::new(1, 2, 4, 6, 2));
        assert!(g.value(u).data().iter().all(|&v| v == 1.5));
        // ramp along x: closed form at coordinate clamp((i + 0.5) / 2 - 0.5, 0, n - 1)
        let n = 5;
        let r = g.input(t(Shape::new(1, 1, 1, 1, n), |i| 2.0 * i as f64 + 1.0));
        let u = g.upsample(r).unwrap();
        let v = g.value(u);
        for i in 0..2 * n {
            let c = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let want = 2.0 * c + 1.0;
            for z in 0..2 {
                for y in 0..2 {
                    assert!((v.volume(0, 0).get(z, y, i) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::<f64>::new();
        let s = Shape::new(1, 1, 1, 1, 3);
        let z = g.input(Tensor::zeros(s));
        let sg = g.sigmoid(z);
        assert!(g.value(sg).data().iter().all(|&v| v == 0.5));
        let c = g.input(Tensor::new(s, vec![-0.2, 0.4, 1.7]).unwrap());
        let cl = g.clamp01(c);
        assert_eq!(g.value(cl).data(), &[0.0, 0.4, 1.0]);
        let p = g.input(Tensor::new(s, vec![0.9, 0.1, 0.5]).unwrap());
        let q = g.input(Tensor::new(s, vec![0.8, 0.0, 0.5]).unwrap());
        let a = g.add(p, q).unwrap();
        let cl = g.clamp01(a);
        assert!(g.value(cl).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let big = g.input(Tensor::new(s, vec![-800.0, 40.0, 800.0]).unwrap());
        let sg = g.sigmoid(big);
        assert!(g.value(sg).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(Shape::new(2, 1, 2, 2, 2), |i| i as f64));
        let b = g.input(t(Shape::new(2, 3, 2, 2, 2), |i| -(i as f64)));
        let c = g.concat(a, b).unwrap();
        assert_eq!(g.shape(c).c, 4);
        let a2 = g.slice_channels(c, 0, 1).unwrap();
        let b2 = g.slice_channels(c, 1, 3).unwrap();
        assert_eq!(g.value(a2), g.value(a));
        assert_eq!(g.value(b2), g.value(b));
        assert!(g.slice_channels(c, 3, 2).is_err());
    }
}
