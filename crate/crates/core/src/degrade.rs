//! Synthetic degradations used in place of real paired datasets.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{usage_err, Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum DegradeKind {
    GaussianNoise { sigma: f64 },
    BoxBlur { k: usize },
    /// Linear motion kernel of odd `length`, `angle` in degrees.
    MotionBlur { length: usize, angle: f64 },
    RainStreaks { count: usize, length: usize, angle: f64, intensity: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradeSpec {
    pub kind: DegradeKind,
    pub seed: u64,
}

impl DegradeKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradeKind::GaussianNoise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(usage_err!("noise sigma must be finite and >= 0, got {sigma}"))
            }
            DegradeKind::BoxBlur { k } if k % 2 == 0 => Err(usage_err!("box blur size must be odd, got {k}")),
            DegradeKind::MotionBlur { length, .. } if length % 2 == 0 => {
                Err(usage_err!("motion blur length must be odd, got {length}"))
            }
            DegradeKind::RainStreaks { intensity, length, .. } if !(0.0..=1.0).contains(&intensity) || length == 0 => {
                Err(usage_err!("rain streaks need intensity in [0, 1] and length >= 1"))
            }
            _ => Ok(()),
        }
    }
}

/// Parses a fraction like `25/255` or a plain number.
pub(crate) fn parse_real(s: &str) -> Result<f64> {
    let bad = || Error::Config(format!("not a number: `{s}`"));
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if b == 0.0 {
                return Err(bad());
            }
            Ok(a / b)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

impl FromStr for DegradeKind {
    type Err = Error;

    /// `gaussian_noise:<sigma>`, `box_blur:<k>`, `motion_blur:<length>:<angle>`
    /// or `rain_streaks:<count>:<length>:<angle>:<intensity>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::Config(format!("not an integer: `{v}`")));
        let kind = match parts.as_slice() {
            ["gaussian_noise", sigma] => DegradeKind::GaussianNoise { sigma: parse_real(sigma)? },
            ["box_blur", k] => DegradeKind::BoxBlur { k: int(k)? },
            ["motion_blur", len, angle] => DegradeKind::MotionBlur { length: int(len)?, angle: parse_real(angle)? },
            ["rain_streaks", count, len, angle, intensity] => DegradeKind::RainStreaks {
                count: int(count)?,
                length: int(len)?,
                angle: parse_real(angle)?,
                intensity: parse_real(intensity)?,
            },
            _ => return Err(Error::Config(format!("unknown degradation `{s}`"))),
        };
        kind.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(kind)
    }
}

impl fmt::Display for DegradeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegradeKind::GaussianNoise { sigma } => write!(f, "gaussian_noise:{sigma}"),
            DegradeKind::BoxBlur { k } => write!(f, "box_blur:{k}"),
            DegradeKind::MotionBlur { length, angle } => write!(f, "motion_blur:{length}:{angle}"),
            DegradeKind::RainStreaks { count, length, angle, intensity } => {
                write!(f, "rain_streaks:{count}:{length}:{angle}:{intensity}")
            }
        }
    }
}

/// Applies `spec` to a unit-range image. Deterministic for a given seed.
pub fn degrade<T: Real>(clean: &Tensor<T>, spec: &DegradeSpec) -> Result<Tensor<T>> {
    spec.kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        DegradeKind::GaussianNoise { sigma } => {
            if sigma == 0.0 {
                return Ok(clean.detached());
            }
            let normal = Normal::new(0.0, sigma).map_err(|e| usage_err!("{e}"))?;
            let data = clean.data().iter().map(|v| T::of((v.as_f64() + normal.sample(&mut rng)).clamp(0.0, 1.0)));
            Tensor::new(clean.shape(), data.collect())
        }
        DegradeKind::BoxBlur { k } => {
            let w = 1.0 / (k * k) as f64;
            let taps: Vec<(isize, isize, f64)> = (0..k * k)
                .map(|i| ((i / k) as isize - (k / 2) as isize, (i % k) as isize - (k / 2) as isize, w))
                .collect();
            Ok(filter_replicate(clean, &taps))
        }
        DegradeKind::MotionBlur { length, angle } => Ok(filter_replicate(clean, &line_taps(length, angle))),
        DegradeKind::RainStreaks { count, length, angle, intensity } => {
            let s = clean.shape();
            let mut mask = vec![0.0f64; s.h * s.w];
            let (dy, dx) = (angle.to_radians().sin(), angle.to_radians().cos());
            for _ in 0..count {
                let (y0, x0) = (rng.random_range(0.0..s.h as f64), rng.random_range(0.0..s.w as f64));
                for step in 0..length {
                    let (y, x) = (y0 + dy * step as f64, x0 + dx * step as f64);
                    if y >= 0.0 && x >= 0.0 && (y as usize) < s.h && (x as usize) < s.w {
                        mask[y as usize * s.w + x as usize] = intensity;
                    }
                }
            }
            Ok(Tensor::from_fn(s, |n, c, h, w| {
                let a = mask[h * s.w + w];
                T::of(clean.get(n, c, h, w).as_f64() * (1.0 - a) + a)
            }))
        }
    }
}

/// Normalized taps of a `length`-pixel line through the origin.
fn line_taps(length: usize, angle: f64) -> Vec<(isize, isize, f64)> {
    let (sy, sx) = (angle.to_radians().sin(), angle.to_radians().cos());
    let half = (length / 2) as f64;
    let mut taps: Vec<(isize, isize, f64)> = Vec::new();
    for i in 0..length {
        let t = i as f64 - half;
        let (dy, dx) = ((t * sy).round() as isize, (t * sx).round() as isize);
        match taps.iter_mut().find(|p| p.0 == dy && p.1 == dx) {
            Some(p) => p.2 += 1.0,
            None => taps.push((dy, dx, 1.0)),
        }
    }
    taps.iter_mut().for_each(|p| p.2 /= length as f64);
    taps
}

/// Per-channel correlation with normalized `taps`, replicating border pixels.
fn filter_replicate<T: Real>(img: &Tensor<T>, taps: &[(isize, isize, f64)]) -> Tensor<T> {
    let s = img.shape();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    Tensor::from_fn(s, |n, c, h, w| {
        // Accumulating offsets from the center keeps flat regions exact.
        let center = img.get(n, c, h, w).as_f64();
        let delta: f64 = taps
            .iter()
            .map(|&(dy, dx, k)| {
                k * (img.get(n, c, clamp(h as isize + dy, s.h), clamp(w as isize + dx, s.w)).as_f64() - center)
            })
            .sum();
        T::of((center + delta).clamp(0.0, 1.0))
    })
}
