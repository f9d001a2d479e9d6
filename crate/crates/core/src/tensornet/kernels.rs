//! Per-sample compute kernels. Each function works on one batch item laid
//! out as `(channels, z, y, x)`; batching and parallelism live in the tape.

use crate::scalar::{gemm, Scalar, Trans};

/// Geometry of a cubic-kernel "same" convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, input: [usize; 3]) -> Self {
        // padding k/2 with stride s gives ceil(n / s) outputs
        let output = input.map(|n| n.div_ceil(stride));
        Self { cin, cout, k, stride, input, output }
    }

    pub fn pad(&self) -> i64 {
        (self.k / 2) as i64
    }

    pub fn in_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.output.iter().product()
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }
}

/// Unfold the input into a `(cin·k³) × out_len` matrix.
pub fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let [iz, iy, ix] = g.input;
    let [oz, oy, ox] = g.output;
    let (k, s, pad) = (g.k, g.stride as i64, g.pad());
    let olen = g.out_len();
    let ilen = g.in_len();
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &x[c * ilen..(c + 1) * ilen];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[row * olen..(row + 1) * olen];
                    row += 1;
                    for z in 0..oz {
                        let sz = z as i64 * s + kz as i64 - pad;
                        for y in 0..oy {
                            let sy = y as i64 * s + ky as i64 - pad;
                            let d = &mut dst[(z * oy + y) * ox..(z * oy + y + 1) * ox];
                            if sz < 0 || sz >= iz as i64 || sy < 0 || sy >= iy as i64 {
                                d.fill(T::zero());
                                continue;
                            }
                            let src = &xc[(sz as usize * iy + sy as usize) * ix..][..ix];
                            for (xo, v) in d.iter_mut().enumerate() {
                                let sx = xo as i64 * s + kx as i64 - pad;
                                *v = if sx >= 0 && sx < ix as i64 { src[sx as usize] } else { T::zero() };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `dx`.
pub fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let [iz, iy, ix] = g.input;
    let [oz, oy, ox] = g.output;
    let (k, s, pad) = (g.k, g.stride as i64, g.pad());
    let olen = g.out_len();
    let ilen = g.in_len();
    let mut row = 0;
    for c in 0..g.cin {
        let dxc = &mut dx[c * ilen..(c + 1) * ilen];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * olen..(row + 1) * olen];
                    row += 1;
                    for z in 0..oz {
                        let sz = z as i64 * s + kz as i64 - pad;
                        if sz < 0 || sz >= iz as i64 {
                            continue;
                        }
                        for y in 0..oy {
                            let sy = y as i64 * s + ky as i64 - pad;
                            if sy < 0 || sy >= iy as i64 {
                                continue;
                            }
                            let line = &src[(z * oy + y) * ox..][..ox];
                            let d = &mut dxc[(sz as usize * iy + sy as usize) * ix..][..ix];
                            for (xo, &v) in line.iter().enumerate() {
                                let sx = xo as i64 * s + kx as i64 - pad;
                                if sx >= 0 && sx < ix as i64 {
                                    d[sx as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded copy of each channel: `(nz+2)(ny+2)(nx+2)` per channel.
struct Padded {
    dims: [usize; 3],
    len: usize,
    /// Flat range of padded indices covering every interior voxel.
    lo: usize,
    hi: usize,
}

impl Padded {
    fn new(input: [usize; 3]) -> Self {
        let dims = input.map(|n| n + 2);
        let len = dims[0] * dims[1] * dims[2];
        let lo = (dims[1] + 1) * dims[2] + 1;
        let hi = (input[0] * dims[1] + input[1]) * dims[2] + input[2] + 1;
        Self { dims, len, lo, hi }
    }

    /// Flat offset of tap `(kz, ky, kx)` relative to the output voxel, plus one row-tap shift.
    fn shift(&self, kz: usize, ky: usize) -> isize {
        let (py, px) = (self.dims[1] as isize, self.dims[2] as isize);
        (kz as isize - 1) * py * px + (ky as isize - 1) * px
    }

    fn pad<T: Scalar>(&self, src: &[T], channels: usize, input: [usize; 3]) -> Vec<T> {
        let [nz, ny, nx] = input;
        let (py, px) = (self.dims[1], self.dims[2]);
        let mut out = vec![T::zero(); channels * self.len];
        for c in 0..channels {
            let s = &src[c * nz * ny * nx..];
            let d = &mut out[c * self.len..];
            for z in 0..nz {
                for y in 0..ny {
                    let o = ((z + 1) * py + y + 1) * px + 1;
                    d[o..o + nx].copy_from_slice(&s[(z * ny + y) * nx..][..nx]);
                }
            }
        }
        out
    }

    /// Add the interior of one padded channel into a dense one.
    fn unpad_add<T: Scalar>(&self, src: &[T], dst: &mut [T], input: [usize; 3]) {
        let [nz, ny, nx] = input;
        let (py, px) = (self.dims[1], self.dims[2]);
        for z in 0..nz {
            for y in 0..ny {
                let o = ((z + 1) * py + y + 1) * px + 1;
                for (d, &s) in dst[(z * ny + y) * nx..][..nx].iter_mut().zip(&src[o..o + nx]) {
                    *d += s;
                }
            }
        }
    }
}

/// `out[i] += Σ_r Σ_j w[3r + j]·rows[r][i + j]`, with every row `out.len() + 2` long.
#[inline(always)]
fn taps9<T: Scalar, const F: bool>(out: &mut [T], rows: [&[T]; 3], w: [T; 9]) {
    let n = out.len();
    let r: [[&[T]; 3]; 3] = rows.map(|row| [&row[..n], &row[1..n + 1], &row[2..n + 2]]);
    for i in 0..n {
        let mut v = out[i];
        for ky in 0..3 {
            for kx in 0..3 {
                v = madd::<T, F>(w[ky * 3 + kx], r[ky][kx][i], v);
            }
        }
        out[i] = v;
    }
}

/// `a·b + c`, fused when `F`.
#[inline(always)]
fn madd<T: Scalar, const F: bool>(a: T, b: T, c: T) -> T {
    if F {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// `[Σ g[i]·a[i], Σ g[i]·a[i+1], Σ g[i]·a[i+2]]` with `a.len() == g.len() + 2`.
#[inline(always)]
fn dot3<T: Scalar, const F: bool>(g: &[T], a: &[T]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = dot::<T, F>(g, &a[k..k + g.len()]);
    }
    out
}

/// Dot product with sixteen independent partial sums.
#[inline(always)]
fn dot<T: Scalar, const F: bool>(a: &[T], b: &[T]) -> T {
    const L: usize = 16;
    let mut acc = [T::zero(); L];
    let ca = a.chunks_exact(L);
    let cb = b.chunks_exact(L);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (pa, pb) in ca.zip(cb) {
        for l in 0..L {
            acc[l] = madd::<T, F>(pa[l], pb[l], acc[l]);
        }
    }
    let mut s = T::zero();
    for v in acc {
        s += v;
    }
    for (&p, &q) in ra.iter().zip(rb) {
        s = madd::<T, F>(p, q, s);
    }
    s
}

/// Correlate padded `src` channels with 3³ kernels over the padded interior
/// range, adding the interior of each result into `dst`. `kernel(o, i)`
/// yields the 27 taps linking source channel `i` to destination `o`.
#[inline(always)]
fn correlate3<T: Scalar, const F: bool>(p: &Padded, input: [usize; 3], src: &[T], cin: usize, cout: usize, kernel: impl Fn(usize, usize) -> [T; 27], dst: &mut [T]) {
    let dense = input[0] * input[1] * input[2];
    let n = p.hi - p.lo;
    let mut acc = vec![T::zero(); p.len];
    for o in 0..cout {
        acc.fill(T::zero());
        for i in 0..cin {
            let s = &src[i * p.len..(i + 1) * p.len];
            let k = kernel(o, i);
            for kz in 0..3 {
                let rows: [&[T]; 3] = std::array::from_fn(|ky| {
                    let start = (p.lo as isize + p.shift(kz, ky) - 1) as usize;
                    &s[start..start + n + 2]
                });
                taps9::<T, F>(&mut acc[p.lo..p.hi], rows, std::array::from_fn(|t| k[kz * 9 + t]));
            }
        }
        p.unpad_add(&acc, &mut dst[o * dense..(o + 1) * dense], input);
    }
}

fn taps_of<T: Scalar>(w: &[T], idx: usize) -> [T; 27] {
    std::array::from_fn(|t| w[idx * 27 + t])
}

/// Direct 3³ stride-1 convolution, accumulating into `out` (pre-filled with bias).
#[inline(always)]
fn conv3_forward_body<T: Scalar, const F: bool>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let p = Padded::new(g.input);
    let xp = p.pad(x, g.cin, g.input);
    correlate3::<T, F>(&p, g.input, &xp, g.cin, g.cout, |co, ci| taps_of(w, co * g.cin + ci), out);
}

/// Input gradient of [`conv3_forward`]: correlation with the flipped kernel.
#[inline(always)]
fn conv3_backward_input_body<T: Scalar, const F: bool>(g: &ConvGeom, w: &[T], dout: &[T], dx: &mut [T]) {
    let p = Padded::new(g.input);
    let gp = p.pad(dout, g.cout, g.input);
    correlate3::<T, F>(
        &p,
        g.input,
        &gp,
        g.cout,
        g.cin,
        |ci, co| {
            let k = taps_of(w, co * g.cin + ci);
            std::array::from_fn(|t| k[26 - t])
        },
        dx,
    );
}

/// Weight gradient of [`conv3_forward`], overwriting `dw`.
#[inline(always)]
fn conv3_backward_weight_body<T: Scalar, const F: bool>(g: &ConvGeom, x: &[T], dout: &[T], dw: &mut [T]) {
    // spatial blocks keep one gradient block and its shifted inputs in L1
    const BLOCK: usize = 1024;
    let p = Padded::new(g.input);
    let xp = p.pad(x, g.cin, g.input);
    let gp = p.pad(dout, g.cout, g.input);
    dw[..g.cout * g.cin * 27].fill(T::zero());
    let mut lo = p.lo;
    while lo < p.hi {
        let n = BLOCK.min(p.hi - lo);
        for co in 0..g.cout {
            let gl = &gp[co * p.len + lo..co * p.len + lo + n];
            for ci in 0..g.cin {
                let xc = &xp[ci * p.len..(ci + 1) * p.len];
                let d = &mut dw[(co * g.cin + ci) * 27..][..27];
                for kz in 0..3 {
                    for ky in 0..3 {
                        let start = (lo as isize + p.shift(kz, ky) - 1) as usize;
                        let r = dot3::<T, F>(gl, &xc[start..start + n + 2]);
                        for (k, v) in r.into_iter().enumerate() {
                            d[kz * 9 + ky * 3 + k] += v;
                        }
                    }
                }
            }
        }
        lo += n;
    }
}

macro_rules! dispatch {
    ($name:ident, $body:ident, $fast:ident, ($($arg:ident: $ty:ty),*)) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2,fma")]
        fn $fast<T: Scalar>($($arg: $ty),*) {
            $body::<T, true>($($arg),*)
        }

        fn $name<T: Scalar>($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: the required CPU features were just detected.
                return unsafe { $fast($($arg),*) };
            }
            $body::<T, false>($($arg),*)
        }
    };
}

dispatch!(conv3_forward, conv3_forward_body, conv3_forward_avx2, (g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]));
dispatch!(conv3_backward_input, conv3_backward_input_body, conv3_backward_input_avx2, (g: &ConvGeom, w: &[T], dout: &[T], dx: &mut [T]));
dispatch!(conv3_backward_weight, conv3_backward_weight_body, conv3_backward_weight_avx2, (g: &ConvGeom, x: &[T], dout: &[T], dw: &mut [T]));

fn is_direct3(g: &ConvGeom) -> bool {
    g.k == 3 && g.stride == 1
}

/// `out (cout × out_len) = W · cols + b`.
pub fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let olen = g.out_len();
    for (co, chunk) in out.chunks_mut(olen).enumerate() {
        chunk.fill(b[co]);
    }
    if is_direct3(g) {
        conv3_forward(g, x, w, out);
        return;
    }
    if g.k == 1 && g.stride == 1 {
        gemm(Trans::No, Trans::No, g.cout, g.cin, olen, T::one(), w, x, T::one(), out);
        return;
    }
    let mut cols = vec![T::zero(); g.col_rows() * olen];
    im2col(g, x, &mut cols);
    gemm(Trans::No, Trans::No, g.cout, g.col_rows(), olen, T::one(), w, &cols, T::one(), out);
}

/// Gradients of one sample. `dw`/`db` are overwritten; `dx` is accumulated
/// into when present.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    let olen = g.out_len();
    let rows = g.col_rows();
    if let Some(db) = db {
        for (co, chunk) in dout.chunks(olen).enumerate() {
            db[co] = chunk.iter().copied().sum();
        }
    }
    if is_direct3(g) {
        if let Some(dw) = dw {
            conv3_backward_weight(g, x, dout, dw);
        }
        if let Some(dx) = dx {
            conv3_backward_input(g, w, dout, dx);
        }
        return;
    }
    let direct = g.k == 1 && g.stride == 1;
    if let Some(dw) = dw {
        if direct {
            gemm(Trans::No, Trans::Yes, g.cout, olen, rows, T::one(), dout, x, T::zero(), dw);
        } else {
            let mut cols = vec![T::zero(); rows * olen];
            im2col(g, x, &mut cols);
            gemm(Trans::No, Trans::Yes, g.cout, olen, rows, T::one(), dout, &cols, T::zero(), dw);
        }
    }
    if let Some(dx) = dx {
        if direct {
            gemm(Trans::Yes, Trans::No, rows, g.cout, olen, T::one(), w, dout, T::one(), dx);
        } else {
            let mut dcols = vec![T::zero(); rows * olen];
            gemm(Trans::Yes, Trans::No, rows, g.cout, olen, T::one(), w, dout, T::zero(), &mut dcols);
            col2im(g, &dcols, dx);
        }
    }
}

/// 2×2×2 max pooling, stride 2. Returns per-output argmax offsets into the
/// input channel; ties resolve to the lowest linear index.
pub fn maxpool_forward<T: Scalar>(channels: usize, input: [usize; 3], x: &[T], out: &mut [T], argmax: &mut [u32]) {
    let [iz, iy, ix] = input;
    let [oz, oy, ox] = [iz / 2, iy / 2, ix / 2];
    let ilen = iz * iy * ix;
    let olen = oz * oy * ox;
    for c in 0..channels {
        let xc = &x[c * ilen..(c + 1) * ilen];
        for z in 0..oz {
            for y in 0..oy {
                for xx in 0..ox {
                    let mut best_i = ((2 * z) * iy + 2 * y) * ix + 2 * xx;
                    let mut best = xc[best_i];
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = ((2 * z + dz) * iy + 2 * y + dy) * ix + 2 * xx + dx;
                                if xc[i] > best {
                                    best = xc[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = c * olen + (z * oy + y) * ox + xx;
                    out[o] = best;
                    argmax[o] = best_i as u32;
                }
            }
        }
    }
}

pub fn maxpool_backward<T: Scalar>(channels: usize, input: [usize; 3], argmax: &[u32], dout: &[T], dx: &mut [T]) {
    let ilen: usize = input.iter().product();
    let olen = ilen / 8;
    for c in 0..channels {
        for o in 0..olen {
            let j = c * olen + o;
            dx[c * ilen + argmax[j] as usize] += dout[j];
        }
    }
}

/// Linear taps of the ×2 upsampler along one axis: output `i` samples input
/// coordinate `(i + 0.5) / 2 − 0.5`, clamped to the border.
fn upsample_taps(n: usize) -> Vec<(usize, usize)> {
    (0..2 * n)
        .map(|i| {
            let j = i / 2;
            let other = if i % 2 == 0 { j.saturating_sub(1) } else { (j + 1).min(n - 1) };
            (j, other)
        })
        .collect()
}

fn upsample_axis<T: Scalar>(src: &[T], dims: [usize; 3], axis: usize) -> (Vec<T>, [usize; 3]) {
    let mut od = dims;
    od[axis] *= 2;
    let taps = upsample_taps(dims[axis]);
    let (w_near, w_far) = (T::lit(0.75), T::lit(0.25));
    let mut out = vec![T::zero(); od.iter().product()];
    for z in 0..od[0] {
        for y in 0..od[1] {
            for x in 0..od[2] {
                let o = [z, y, x];
                let (a, b) = taps[o[axis]];
                let mut pa = o;
                pa[axis] = a;
                let mut pb = o;
                pb[axis] = b;
                let ia = (pa[0] * dims[1] + pa[1]) * dims[2] + pa[2];
                let ib = (pb[0] * dims[1] + pb[1]) * dims[2] + pb[2];
                out[(z * od[1] + y) * od[2] + x] = w_near * src[ia] + w_far * src[ib];
            }
        }
    }
    (out, od)
}

fn upsample_axis_adjoint<T: Scalar>(dout: &[T], dims: [usize; 3], axis: usize) -> Vec<T> {
    // dims are the *input* dims of the forward pass
    let mut od = dims;
    od[axis] *= 2;
    let taps = upsample_taps(dims[axis]);
    let (w_near, w_far) = (T::lit(0.75), T::lit(0.25));
    let mut dx = vec![T::zero(); dims.iter().product()];
    for z in 0..od[0] {
        for y in 0..od[1] {
            for x in 0..od[2] {
                let o = [z, y, x];
                let g = dout[(z * od[1] + y) * od[2] + x];
                let (a, b) = taps[o[axis]];
                let mut pa = o;
                pa[axis] = a;
                let mut pb = o;
                pb[axis] = b;
                dx[(pa[0] * dims[1] + pa[1]) * dims[2] + pa[2]] += w_near * g;
                dx[(pb[0] * dims[1] + pb[1]) * dims[2] + pb[2]] += w_far * g;
            }
        }
    }
    dx
}

/// Separable trilinear ×2 upsampling of one channel.
pub fn upsample_forward<T: Scalar>(input: [usize; 3], x: &[T]) -> Vec<T> {
    let (a, d) = upsample_axis(x, input, 0);
    let (b, d) = upsample_axis(&a, d, 1);
    upsample_axis(&b, d, 2).0
}

/// Exact adjoint of [`upsample_forward`].
pub fn upsample_backward<T: Scalar>(input: [usize; 3], dout: &[T]) -> Vec<T> {
    let d1 = [input[0] * 2, input[1], input[2]];
    let d2 = [input[0] * 2, input[1] * 2, input[2]];
    let g = upsample_axis_adjoint(dout, d2, 2);
    let g = upsample_axis_adjoint(&g, d1, 1);
    upsample_axis_adjoint(&g, input, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop cross-correlation oracle.
    fn naive_conv(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let [iz, iy, ix] = g.input;
        let [oz, oy, ox] = g.output;
        let k = g.k;
        let pad = g.pad();
        let mut out = vec![0.0; g.cout * g.out_len()];
        for co in 0..g.cout {
            for z in 0..oz {
                for y in 0..oy {
                    for xx in 0..ox {
                        let mut s = b[co];
                        for ci in 0..g.cin {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let p = [
                                            (z * g.stride + kz) as i64 - pad,
                                            (y * g.stride + ky) as i64 - pad,
                                            (xx * g.stride + kx) as i64 - pad,
                                        ];
                                        if p[0] < 0 || p[1] < 0 || p[2] < 0 {
                                            continue;
                                        }
                                        let p = p.map(|v| v as usize);
                                        if p[0] >= iz || p[1] >= iy || p[2] >= ix {
                                            continue;
                                        }
                                        let xi = ((ci * iz + p[0]) * iy + p[1]) * ix + p[2];
                                        let wi = (((co * g.cin + ci) * k + kz) * k + ky) * k + kx;
                                        s += w[wi] * x[xi];
                                    }
                                }
                            }
                        }
                        out[(co * oz + z) * oy * ox + y * ox + xx] = s;
                    }
                }
            }
        }
        out
    }

    fn seq(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * f).sin()).collect()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for (k, stride, input) in [(3, 1, [4, 5, 6]), (3, 1, [1, 2, 1]), (3, 2, [6, 4, 8]), (1, 1, [3, 3, 3]), (3, 2, [5, 3, 7])] {
            let g = ConvGeom::new(2, 3, k, stride, input);
            let x = seq(g.cin * g.in_len(), 0.7);
            let w = seq(g.cout * g.col_rows(), 1.3);
            let b = seq(g.cout, 2.1);
            let mut out = vec![0.0; g.cout * g.out_len()];
            conv_forward(&g, &x, &w, &b, &mut out);
            let want = naive_conv(&g, &x, &w, &b);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k={k} s={stride}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), r> gradient wrt x equals conv_backward dx for linear maps
        let g = ConvGeom::new(2, 2, 3, 2, [4, 4, 6]);
        let x = seq(g.cin * g.in_len(), 0.3);
        let w = seq(g.cout * g.col_rows(), 0.9);
        let zero_b = vec![0.0; g.cout];
        let r = seq(g.cout * g.out_len(), 1.7);
        let mut dx = vec![0.0; x.len()];
        conv_backward(&g, &x, &w, &r, None, None, Some(&mut dx));
        let mut out = vec![0.0; r.len()];
        conv_forward(&g, &x, &w, &zero_b, &mut out);
        let lhs: f64 = out.iter().zip(&r).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn direct_backward_matches_im2col_route() {
        for input in [[4, 5, 6], [1, 3, 1], [3, 1, 2]] {
            let g = ConvGeom::new(3, 2, 3, 1, input);
            let x = seq(g.cin * g.in_len(), 0.53);
            let w = seq(g.cout * g.col_rows(), 1.1);
            let d = seq(g.cout * g.out_len(), 0.29);
            let mut dw = vec![0.0; w.len()];
            let mut dx = vec![0.0; x.len()];
            conv_backward(&g, &x, &w, &d, Some(&mut dw), None, Some(&mut dx));
            // second route: explicit im2col and matrix products
            let olen = g.out_len();
            let rows = g.col_rows();
            let mut cols = vec![0.0; rows * olen];
            im2col(&g, &x, &mut cols);
            let mut dw2 = vec![0.0; w.len()];
            gemm(Trans::No, Trans::Yes, g.cout, olen, rows, 1.0, &d, &cols, 0.0, &mut dw2);
            let mut dcols = vec![0.0; rows * olen];
            gemm(Trans::Yes, Trans::No, rows, g.cout, olen, 1.0, &w, &d, 0.0, &mut dcols);
            let mut dx2 = vec![0.0; x.len()];
            col2im(&g, &dcols, &mut dx2);
            for (a, b) in dw.iter().zip(&dw2).chain(dx.iter().zip(&dx2)) {
                assert!((a - b).abs() < 1e-10, "{input:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn fused_and_plain_direct_kernels_agree() {
        let g = ConvGeom::new(3, 2, 3, 1, [5, 4, 7]);
        let x = seq(g.cin * g.in_len(), 0.61);
        let w = seq(g.cout * g.col_rows(), 0.83);
        let d = seq(g.cout * g.out_len(), 0.37);
        let run = |fused: bool| {
            let mut out = vec![0.0; d.len()];
            let mut dx = vec![0.0; x.len()];
            let mut dw = vec![0.0; w.len()];
            if fused {
                conv3_forward_body::<f64, true>(&g, &x, &w, &mut out);
                conv3_backward_input_body::<f64, true>(&g, &w, &d, &mut dx);
                conv3_backward_weight_body::<f64, true>(&g, &x, &d, &mut dw);
            } else {
                conv3_forward_body::<f64, false>(&g, &x, &w, &mut out);
                conv3_backward_input_body::<f64, false>(&g, &w, &d, &mut dx);
                conv3_backward_weight_body::<f64, false>(&g, &x, &d, &mut dw);
            }
            [out, dx, dw].concat()
        };
        let want = naive_conv(&g, &x, &w, &vec![0.0; g.cout]);
        let (a, b) = (run(true), run(false));
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
        for (u, v) in b.iter().zip(&want) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_adjoint_identity() {
        let input = [2, 3, 4];
        let x = seq(24, 0.41);
        let r = seq(24 * 8, 0.77);
        let y = upsample_forward(input, &x);
        let dx = upsample_backward(input, &r);
        let lhs: f64 = y.iter().zip(&r).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_ties_go_to_lowest_index() {
        let x = vec![1.0f64; 8];
        let mut out = vec![0.0; 1];
        let mut am = vec![9u32; 1];
        maxpool_forward(1, [2, 2, 2], &x, &mut out, &mut am);
        assert_eq!((out[0], am[0]), (1.0, 0));
        let x = vec![0.0, 3.0, 3.0, 1.0, 0.0, 0.0, 0.0, 3.0];
        maxpool_forward(1, [2, 2, 2], &x, &mut out, &mut am);
        assert_eq!((out[0], am[0]), (3.0, 1));
        let x = vec![-5.0, -4.0, -3.0, -2.0, -6.0, -7.0, -8.0, -9.0];
        maxpool_forward(1, [2, 2, 2], &x, &mut out, &mut am);
        assert_eq!((out[0], am[0]), (-2.0, 3));
    }
}
