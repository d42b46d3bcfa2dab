//! Image quality metrics and the error-reduction conversions used to
//! compare methods.
//!
//! Everything here is evaluated in `f64` regardless of the tensor precision.

use std::fmt;
use std::fmt::Write as _;

use crate::error::{dim_err, usage_err, Result};
use crate::tensor::{Real, Shape, Tensor};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Compensated (Neumaier) summation.
fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn same_shape<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(dim_err!("metric inputs differ in shape: {} vs {}", x.shape(), y.shape()));
    }
    Ok(())
}

pub fn mse<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    same_shape(x, y)?;
    let sum = neumaier_sum(x.data().iter().zip(y.data()).map(|(&a, &b)| {
        let d = a.as_f64() - b.as_f64();
        d * d
    }));
    Ok(sum / x.numel() as f64)
}

/// `10 · log10(peak² / MSE)` in dB; `+inf` when the images are identical.
pub fn psnr<T: Real>(x: &Tensor<T>, y: &Tensor<T>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(usage_err!("PSNR peak must be positive, got {peak}"));
    }
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// BT.601 luma `0.299 R + 0.587 G + 0.114 B`.
pub fn rgb_to_y<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let s = img.shape();
    if s.c != 3 {
        return Err(usage_err!("rgb_to_y needs 3 channels, got {s}"));
    }
    // Integer weights keep white at exactly 1 and pure primaries at their coefficient.
    Ok(Tensor::from_fn(Shape { c: 1, ..s }, |n, _, h, w| {
        let (r, g, b) = (img.get(n, 0, h, w).as_f64(), img.get(n, 1, h, w).as_f64(), img.get(n, 2, h, w).as_f64());
        T::of((299.0 * r + 587.0 * g + 114.0 * b) / 1000.0)
    }))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering of an `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = win.iter().enumerate().map(|(i, &c)| c * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(i, &c)| c * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity of single-channel, unit-range images using an
/// 11×11 Gaussian window (σ = 1.5), K1 = 0.01 and K2 = 0.03. Batches are
/// averaged.
pub fn ssim<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    same_shape(x, y)?;
    let s = x.shape();
    if s.c != 1 {
        return Err(usage_err!("ssim expects single-channel images, got {s}; convert with rgb_to_y first"));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(usage_err!("ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {s}"));
    }
    let win = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let plane = s.h * s.w;
    let mut per_image = Vec::with_capacity(s.n);
    for n in 0..s.n {
        let xa: Vec<f64> = x.data()[n * plane..(n + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let ya: Vec<f64> = y.data()[n * plane..(n + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_x = filter_valid(&xa, s.h, s.w, &win);
        let mu_y = filter_valid(&ya, s.h, s.w, &win);
        let e_xx = filter_valid(&prod(&xa, &xa), s.h, s.w, &win);
        let e_yy = filter_valid(&prod(&ya, &ya), s.h, s.w, &win);
        let e_xy = filter_valid(&prod(&xa, &ya), s.h, s.w, &win);
        let map: Vec<f64> = (0..mu_x.len())
            .map(|i| {
                let (mx, my) = (mu_x[i], mu_y[i]);
                let vx = e_xx[i] - mx * mx;
                let vy = e_yy[i] - my * my;
                let cov = e_xy[i] - mx * my;
                let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
                let den = (mx * mx + my * my + c1) * (vx + vy + c2);
                num / den
            })
            .collect();
        per_image.push(map.iter().sum::<f64>() / map.len() as f64);
    }
    Ok(per_image.iter().sum::<f64>() / s.n as f64)
}

/// Fraction of RMSE removed when going from `psnr_method` to `psnr_best`:
/// `1 - 10^(-(best - method) / 20)`.
pub fn error_reduction_psnr(psnr_method: f64, psnr_best: f64) -> f64 {
    1.0 - 10f64.powf(-(psnr_best - psnr_method) / 20.0)
}

/// Fraction of DSSIM `(1 - SSIM) / 2` removed going from `ssim_method` to
/// `ssim_best`.
pub fn error_reduction_ssim(ssim_method: f64, ssim_best: f64) -> Result<f64> {
    if ssim_method == 1.0 {
        return Err(usage_err!("SSIM error reduction is undefined when the method's SSIM is 1"));
    }
    Ok(1.0 - (1.0 - ssim_best) / (1.0 - ssim_method))
}

/// Where metrics were evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ColorSpace {
    #[default]
    Rgb,
    YChannel,
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorSpace::Rgb => "rgb",
            ColorSpace::YChannel => "y-channel",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub evaluated_on: ColorSpace,
}

impl MetricReport {
    /// PSNR and SSIM of a restored RGB image against its reference. On RGB,
    /// SSIM is the mean over the three channels.
    pub fn compute<T: Real>(restored: &Tensor<T>, reference: &Tensor<T>, space: ColorSpace) -> Result<Self> {
        same_shape(restored, reference)?;
        match space {
            ColorSpace::YChannel => {
                let (a, b) = (rgb_to_y(restored)?, rgb_to_y(reference)?);
                Ok(Self { psnr: psnr(&a, &b, 1.0)?, ssim: ssim(&a, &b)?, evaluated_on: space })
            }
            ColorSpace::Rgb => {
                let s = restored.shape();
                let mut total = 0.0;
                for c in 0..s.c {
                    let plane = |t: &Tensor<T>| Tensor::from_fn(Shape { c: 1, ..s }, |n, _, h, w| t.get(n, c, h, w));
                    total += ssim(&plane(restored), &plane(reference))?;
                }
                Ok(Self { psnr: psnr(restored, reference, 1.0)?, ssim: total / s.c as f64, evaluated_on: space })
            }
        }
    }

    /// `metric=value` lines with stable keys.
    pub fn to_text(&self) -> String {
        format!("psnr={}\nssim={}\nevaluated_on={}\n", fmt_db(self.psnr), self.ssim, self.evaluated_on)
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// Named rows of PSNR/SSIM with error reduction relative to the best row.
#[derive(Clone, Debug, Default)]
pub struct MetricTable {
    rows: Vec<(String, f64, f64)>,
}

impl MetricTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, label: impl Into<String>, psnr: f64, ssim: f64) {
        self.rows.push((label.into(), psnr, ssim));
    }

    /// Error reductions `(psnr, ssim)` of each row versus the best PSNR row
    /// and best SSIM row.
    pub fn reductions(&self) -> Vec<(f64, Option<f64>)> {
        let best_psnr = self.rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        let best_ssim = self.rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
        self.rows
            .iter()
            .map(|&(_, p, s)| {
                let rp = if p == best_psnr { 0.0 } else { error_reduction_psnr(p, best_psnr) };
                let rs = if s == best_ssim { Some(0.0) } else { error_reduction_ssim(s, best_ssim).ok() };
                (rp, rs)
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>10} {:>9} {:>8} {:>9}", "row", "psnr", "(err-red)", "ssim", "(err-red)");
        for ((label, p, s), (rp, rs)) in self.rows.iter().zip(self.reductions()) {
            let rs = rs.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", 100.0 * v));
            let _ = writeln!(out, "{label:<12} {:>10} {:>9} {s:>8.4} {rs:>9}", fmt_db(*p), format!("{:.1}%", 100.0 * rp));
        }
        out
    }
}
