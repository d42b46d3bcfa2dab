//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use mprnet::{Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_t(dims: [usize; 4], seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(Shape::from_dims(dims).unwrap(), -1.0, 1.0, &mut rng(seed))
}

pub fn unit_t(dims: [usize; 4], seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(Shape::from_dims(dims).unwrap(), 0.0, 1.0, &mut rng(seed))
}

/// Direct six-loop cross-correlation with zero padding.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let ho = (xs.h + 2 * pad - ws.h) / stride + 1;
    let wo = (xs.w + 2 * pad - ws.w) / stride + 1;
    Tensor::from_fn(Shape::new(xs.n, ws.n, ho, wo).unwrap(), |n, o, i, j| {
        let mut acc = b.map_or(0.0, |b| b[o]);
        for c in 0..xs.c {
            for ky in 0..ws.h {
                for kx in 0..ws.w {
                    let y = (i * stride + ky) as isize - pad as isize;
                    let xx = (j * stride + kx) as isize - pad as isize;
                    if y >= 0 && xx >= 0 && (y as usize) < xs.h && (xx as usize) < xs.w {
                        acc += w.get(o, c, ky, kx) * x.get(n, c, y as usize, xx as usize);
                    }
                }
            }
        }
        acc
    })
}

/// Half-pixel bilinear sample position for output index `o` of a ×2 upsample.
fn source(o: usize, len: usize) -> (usize, usize, f64) {
    let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, s - i0 as f64)
}

pub fn upsample_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, 2 * s.h, 2 * s.w).unwrap(), |n, c, i, j| {
        let (y0, y1, ty) = source(i, s.h);
        let (x0, x1, tx) = source(j, s.w);
        let top = x.get(n, c, y0, x0) * (1.0 - tx) + x.get(n, c, y0, x1) * tx;
        let bot = x.get(n, c, y1, x0) * (1.0 - tx) + x.get(n, c, y1, x1) * tx;
        top * (1.0 - ty) + bot * ty
    })
}

pub fn laplacian_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let at = |n: usize, c: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i as usize >= s.h || j as usize >= s.w {
            0.0
        } else {
            x.get(n, c, i as usize, j as usize)
        }
    };
    Tensor::from_fn(s, |n, c, i, j| {
        let (i, j) = (i as isize, j as isize);
        at(n, c, i - 1, j) + at(n, c, i + 1, j) + at(n, c, i, j - 1) + at(n, c, i, j + 1) - 4.0 * at(n, c, i, j)
    })
}

pub fn charbonnier_oracle(x: &[f64], y: &[f64], eps: f64) -> f64 {
    x.iter().zip(y).map(|(a, b)| ((a - b).powi(2) + eps * eps).sqrt()).sum::<f64>() / x.len() as f64
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
