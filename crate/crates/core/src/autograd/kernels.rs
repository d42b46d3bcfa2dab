//! Numeric forward/backward kernels on flat NCHW buffers.

use rayon::prelude::*;

use crate::error::{dim_err, Result};
use crate::tensor::{gemm, Real, Shape};

/// Geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(dim_err!("conv2d stride must be positive"));
        }
        if input.c != weight.c {
            return Err(dim_err!(
                "conv2d channel mismatch: input {input} has {} channels, weight {weight} expects {}",
                input.c,
                weight.c
            ));
        }
        let span_h = input.h + 2 * pad;
        let span_w = input.w + 2 * pad;
        if span_h < weight.h || span_w < weight.w {
            return Err(dim_err!("conv2d kernel {weight} larger than padded input {input} (padding {pad})"));
        }
        if (span_h - weight.h) % stride != 0 || (span_w - weight.w) % stride != 0 {
            return Err(dim_err!(
                "conv2d output size of input {input}, weight {weight}, stride {stride}, padding {pad} is not an integer"
            ));
        }
        Ok(Self {
            n: input.n,
            ci: input.c,
            h: input.h,
            w: input.w,
            co: weight.n,
            kh: weight.h,
            kw: weight.w,
            stride,
            pad,
            ho: (span_h - weight.h) / stride + 1,
            wo: (span_w - weight.w) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> Shape {
        Shape { n: self.n, c: self.co, h: self.ho, w: self.wo }
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.ci * self.h * self.w
    }

    /// Output columns `[lo, hi)` whose input column `ox*stride + kj - pad` is in range.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let mut lo = 0;
        while lo < self.wo && (lo * self.stride + kj) < self.pad {
            lo += 1;
        }
        let mut hi = lo;
        while hi < self.wo && (hi * self.stride + kj) < self.pad + self.w {
            hi += 1;
        }
        (lo, hi)
    }
}

/// Unfolds one sample into a `K × P` column matrix.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.p();
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = lo + kj - g.pad;
                        drow[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            drow[ox] = src[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Folds a `K × P` column matrix back, accumulating into `dx`.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.p();
    for c in 0..g.ci {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    for ox in lo..hi {
                        let ix = ox * g.stride + kj - g.pad;
                        drow[ix] = drow[ix] + srow[ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (k, p) = (g.k(), g.p());
    let mut out = vec![T::zero(); g.n * g.co * p];
    out.par_chunks_mut(g.co * p).zip(x.par_chunks(g.in_len())).for_each(|(o, xb)| {
        if g.pointwise() {
            gemm(g.co, k, p, weight, false, xb, false, T::zero(), o);
        } else {
            let mut cols = vec![T::zero(); k * p];
            im2col(xb, g, &mut cols);
            gemm(g.co, k, p, weight, false, &cols, false, T::zero(), o);
        }
        if let Some(b) = bias {
            for (plane, &bv) in o.chunks_mut(p).zip(b) {
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    });
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeom,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let (k, p) = (g.k(), g.p());
    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..g.n)
        .into_par_iter()
        .map(|b| {
            let xb = &x[b * g.in_len()..(b + 1) * g.in_len()];
            let dyb = &dy[b * g.co * p..(b + 1) * g.co * p];
            let cols_owned;
            let cols: &[T] = if g.pointwise() {
                xb
            } else if need_weight {
                let mut c = vec![T::zero(); k * p];
                im2col(xb, g, &mut c);
                cols_owned = c;
                &cols_owned
            } else {
                &[]
            };
            let dw = need_weight.then(|| {
                let mut dw = vec![T::zero(); g.co * k];
                gemm(g.co, p, k, dyb, false, cols, true, T::zero(), &mut dw);
                dw
            });
            let dx = need_input.then(|| {
                if g.pointwise() {
                    let mut dx = vec![T::zero(); g.in_len()];
                    gemm(k, g.co, p, weight, true, dyb, false, T::zero(), &mut dx);
                    dx
                } else {
                    let mut dcols = vec![T::zero(); k * p];
                    gemm(k, g.co, p, weight, true, dyb, false, T::zero(), &mut dcols);
                    let mut dx = vec![T::zero(); g.in_len()];
                    col2im(&dcols, g, &mut dx);
                    dx
                }
            });
            (dx, dw)
        })
        .collect();

    let input = need_input.then(|| {
        let mut dx = Vec::with_capacity(g.n * g.in_len());
        for (d, _) in &per_sample {
            dx.extend_from_slice(d.as_ref().expect("input gradient computed"));
        }
        dx
    });
    let weight_grad = need_weight.then(|| {
        let mut dw = vec![T::zero(); g.co * k];
        for (_, d) in &per_sample {
            let d = d.as_ref().expect("weight gradient computed");
            dw.iter_mut().zip(d).for_each(|(a, &b)| *a = *a + b);
        }
        dw
    });
    let bias = need_bias.then(|| {
        let mut db = vec![T::zero(); g.co];
        for plane in dy.chunks(p).enumerate() {
            let (idx, vals) = plane;
            let c = idx % g.co;
            db[c] = db[c] + vals.iter().copied().sum::<T>();
        }
        db
    });
    ConvGrads { input, weight: weight_grad, bias }
}

/// 2×2/stride-2 max pooling; returns the output and the flat input index of
/// each selected cell. Ties go to the first cell in row-major window order.
pub(crate) fn max_pool2_forward<T: Real>(x: &[T], s: Shape) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (s.h / 2, s.w / 2);
    let planes = s.n * s.c;
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for pl in 0..planes {
        let base = pl * s.h * s.w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * s.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * s.w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Source taps for doubling one axis with half-pixel centers: each output
/// index maps to `x[i0] + frac * (x[i1] - x[i0])`.
pub(crate) fn upsample_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = src.floor() as usize;
            let i0 = i0.min(len - 1);
            let frac = src - i0 as f64;
            if frac <= 0.0 || i0 + 1 == len {
                (i0, i0, 0.0)
            } else {
                (i0, i0 + 1, frac)
            }
        })
        .collect()
}

pub(crate) fn upsample2_forward<T: Real>(x: &[T], s: Shape) -> Vec<T> {
    let ty = upsample_taps(s.h);
    let tx = upsample_taps(s.w);
    let (ho, wo) = (2 * s.h, 2 * s.w);
    let mut out = Vec::with_capacity(s.n * s.c * ho * wo);
    for plane in x.chunks(s.h * s.w) {
        for &(y0, y1, fy) in &ty {
            let fy = T::of(fy);
            let r0 = &plane[y0 * s.w..(y0 + 1) * s.w];
            let r1 = &plane[y1 * s.w..(y1 + 1) * s.w];
            for &(x0, x1, fx) in &tx {
                let fx = T::of(fx);
                let v0 = r0[x0] + fx * (r0[x1] - r0[x0]);
                let v1 = r1[x0] + fx * (r1[x1] - r1[x0]);
                out.push(v0 + fy * (v1 - v0));
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(dy: &[T], s: Shape) -> Vec<T> {
    let ty = upsample_taps(s.h);
    let tx = upsample_taps(s.w);
    let wo = 2 * s.w;
    let mut dx = vec![T::zero(); s.numel()];
    for (plane, dplane) in dx.chunks_mut(s.h * s.w).zip(dy.chunks(4 * s.h * s.w)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let g = dplane[oy * wo + ox];
                let g0 = g * (T::one() - fy);
                let g1 = g * fy;
                for (row, gr) in [(y0, g0), (y1, g1)] {
                    let a = row * s.w + x0;
                    let b = row * s.w + x1;
                    plane[a] = plane[a] + gr * (T::one() - fx);
                    plane[b] = plane[b] + gr * fx;
                }
            }
        }
    }
    dx
}

/// Per-channel 4-neighbour Laplacian with zero padding. The kernel is
/// symmetric, so the same routine is its own adjoint.
pub(crate) fn laplacian<T: Real>(x: &[T], s: Shape) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(s.h * s.w).zip(out.chunks_mut(s.h * s.w)) {
        let at = |i: usize, j: usize| src[i * s.w + j];
        for i in 0..s.h {
            for j in 0..s.w {
                // Neighbour differences keep constant and affine inputs exactly zero.
                let c = at(i, j);
                let up = if i > 0 { at(i - 1, j) } else { T::zero() } - c;
                let down = if i + 1 < s.h { at(i + 1, j) } else { T::zero() } - c;
                let left = if j > 0 { at(i, j - 1) } else { T::zero() } - c;
                let right = if j + 1 < s.w { at(i, j + 1) } else { T::zero() } - c;
                dst[i * s.w + j] = (up + down) + (left + right);
            }
        }
    }
    out
}

/// Splits a shape into `(outer, axis_len, inner)` around `axis`.
pub(crate) fn axis_split(s: Shape, axis: usize) -> (usize, usize, usize) {
    let d = s.dims();
    let outer: usize = d[..axis].iter().product();
    let inner: usize = d[axis + 1..].iter().product();
    (outer, d[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_match_half_pixel_rule() {
        let t = upsample_taps(3);
        assert_eq!(t[0], (0, 0, 0.0));
        assert_eq!(t[1], (0, 1, 0.25));
        assert_eq!(t[2], (0, 1, 0.75));
        assert_eq!(t[5], (2, 2, 0.0));
    }

    #[test]
    fn strided_geometry() {
        let g = ConvGeom::new(Shape::new(1, 2, 7, 7).unwrap(), Shape::new(4, 2, 3, 3).unwrap(), 2, 1).unwrap();
        assert_eq!((g.ho, g.wo), (4, 4));
        assert!(ConvGeom::new(Shape::new(1, 2, 6, 6).unwrap(), Shape::new(4, 2, 3, 3).unwrap(), 2, 0).is_err());
    }
}
