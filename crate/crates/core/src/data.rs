//! Clean image sources, paired patch sampling, flip augmentation and a
//! background batch producer.

use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::{degrade, DegradeKind, DegradeSpec};
use crate::error::{usage_err, Error, Result};
use crate::image_io::read_image;
use crate::tensor::{Real, Shape, Tensor};

/// Procedural texture families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Gradient,
    Checkerboard,
    FilteredNoise,
    Sinusoid,
}

impl Texture {
    pub const ALL: [Texture; 4] = [Texture::Gradient, Texture::Checkerboard, Texture::FilteredNoise, Texture::Sinusoid];
}

/// A `(1, 3, size, size)` unit-range texture.
pub fn procedural_image<T: Real>(texture: Texture, size: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    let shape = Shape::new(1, 3, size, size)?;
    let sz = size as f64;
    let mut color = || [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    let (ca, cb) = (color(), color());
    let img: Tensor<f64> = match texture {
        Texture::Gradient => {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (dy, dx) = (angle.sin(), angle.cos());
            Tensor::from_fn(shape, |_, c, h, w| {
                let t = 0.5 + ((h as f64 / sz - 0.5) * dy + (w as f64 / sz - 0.5) * dx) / std::f64::consts::SQRT_2;
                ca[c] + (cb[c] - ca[c]) * t
            })
        }
        Texture::Checkerboard => {
            let cell = rng.random_range(4..=(size / 4).max(4));
            Tensor::from_fn(shape, |_, c, h, w| if (h / cell + w / cell) % 2 == 0 { ca[c] } else { cb[c] })
        }
        Texture::FilteredNoise => {
            let raw: Vec<f64> = (0..3 * size * size).map(|_| rng.random_range(0.0..1.0)).collect();
            let radius = 2isize;
            let blurred = Tensor::from_fn(shape, |_, c, h, w| {
                let mut acc = 0.0;
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let y = (h as isize + dy).rem_euclid(size as isize) as usize;
                        let x = (w as isize + dx).rem_euclid(size as isize) as usize;
                        acc += raw[(c * size + y) * size + x];
                    }
                }
                acc / ((2 * radius + 1) * (2 * radius + 1)) as f64
            });
            // Stretch the contracted range back out around 0.5.
            blurred.map(|v| 0.5 + (v - 0.5) * 3.0)
        }
        Texture::Sinusoid => {
            let (fy, fx) = (rng.random_range(1.0..4.0), rng.random_range(1.0..4.0));
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            Tensor::from_fn(shape, |_, c, h, w| {
                let t = 0.5
                    + 0.5 * (std::f64::consts::TAU * (fy * h as f64 + fx * w as f64) / sz + phase + c as f64).sin();
                ca[c] + (cb[c] - ca[c]) * t
            })
        }
    };
    Ok(img.map(|v| v.clamp(0.0, 1.0)).cast())
}

/// Clean images cycling through every texture family.
pub fn procedural_set<T: Real>(count: usize, size: usize, seed: u64) -> Result<Vec<Tensor<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| procedural_image(Texture::ALL[i % Texture::ALL.len()], size, &mut rng)).collect()
}

/// Every readable PNG/PPM in `dir`, in file-name order.
pub fn load_dir<T: Real>(dir: &Path) -> Result<Vec<Tensor<T>>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "ppm" | "PNG" | "PPM")))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_image(p)).collect()
}

/// Clean target and its degraded observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair<T: Real> {
    pub clean: Tensor<T>,
    pub degraded: Tensor<T>,
}

impl<T: Real> ImagePair<T> {
    pub fn new(clean: Tensor<T>, degraded: Tensor<T>) -> Result<Self> {
        if clean.shape() != degraded.shape() {
            return Err(crate::error::dim_err!("pair shapes differ: {} vs {}", clean.shape(), degraded.shape()));
        }
        Ok(Self { clean, degraded })
    }

    pub fn synthesize(clean: Tensor<T>, kind: &DegradeKind, seed: u64) -> Result<Self> {
        let degraded = degrade(&clean, &DegradeSpec { kind: kind.clone(), seed })?;
        Ok(Self { clean, degraded })
    }
}

fn crop<T: Real>(img: &Tensor<T>, oy: usize, ox: usize, size: usize) -> Tensor<T> {
    let s = img.shape();
    Tensor::from_fn(Shape { h: size, w: size, ..s }, |n, c, h, w| img.get(n, c, oy + h, ox + w))
}

/// Same random `size × size` window from both images; returns the pair and
/// the `(row, col)` offset.
pub fn sample_patch<T: Real>(pair: &ImagePair<T>, size: usize, rng: &mut impl Rng) -> Result<(ImagePair<T>, (usize, usize))> {
    let s = pair.clean.shape();
    if size == 0 || size > s.h || size > s.w {
        return Err(usage_err!("patch size {size} does not fit image {s}"));
    }
    let oy = rng.random_range(0..=s.h - size);
    let ox = rng.random_range(0..=s.w - size);
    let out = ImagePair { clean: crop(&pair.clean, oy, ox, size), degraded: crop(&pair.degraded, oy, ox, size) };
    Ok((out, (oy, ox)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flips {
    pub horizontal: bool,
    pub vertical: bool,
}

pub fn flip<T: Real>(img: &Tensor<T>, flips: Flips) -> Tensor<T> {
    let s = img.shape();
    Tensor::from_fn(s, |n, c, h, w| {
        let h = if flips.vertical { s.h - 1 - h } else { h };
        let w = if flips.horizontal { s.w - 1 - w } else { w };
        img.get(n, c, h, w)
    })
}

/// Random horizontal/vertical flips applied identically to both images.
pub fn augment_flip<T: Real>(pair: &ImagePair<T>, rng: &mut impl Rng) -> (ImagePair<T>, Flips) {
    let flips = Flips { horizontal: rng.random_bool(0.5), vertical: rng.random_bool(0.5) };
    (ImagePair { clean: flip(&pair.clean, flips), degraded: flip(&pair.degraded, flips) }, flips)
}

/// Stacked `(degraded, clean)` training batch.
#[derive(Clone, Debug)]
pub struct Batch<T: Real> {
    pub degraded: Tensor<T>,
    pub clean: Tensor<T>,
}

/// How training batches are drawn from clean sources.
#[derive(Clone, Debug)]
pub struct BatchSpec {
    pub patch_size: usize,
    pub batch_size: usize,
    pub augment_flips: bool,
    pub degradation: DegradeKind,
}

/// Draws one batch. Each sample picks a clean source, degrades it with a
/// fresh seed, then crops and optionally flips the pair.
pub fn draw_batch<T: Real>(sources: &[Tensor<T>], spec: &BatchSpec, rng: &mut ChaCha8Rng) -> Result<Batch<T>> {
    if sources.is_empty() {
        return Err(usage_err!("no clean images to sample from"));
    }
    let mut degraded = Vec::with_capacity(spec.batch_size);
    let mut clean = Vec::with_capacity(spec.batch_size);
    for _ in 0..spec.batch_size {
        let src = &sources[rng.random_range(0..sources.len())];
        let pair = ImagePair::synthesize(src.clone(), &spec.degradation, rng.random())?;
        let (mut patch, _) = sample_patch(&pair, spec.patch_size, rng)?;
        if spec.augment_flips {
            patch = augment_flip(&patch, rng).0;
        }
        degraded.push(patch.degraded);
        clean.push(patch.clean);
    }
    Ok(Batch { degraded: Tensor::stack(&degraded)?, clean: Tensor::stack(&clean)? })
}

/// Generates batches on a worker thread into a bounded queue. The stream is
/// identical to calling [`draw_batch`] repeatedly with one RNG.
pub struct BatchProducer<T: Real> {
    rx: Receiver<Result<Batch<T>>>,
    handle: Option<JoinHandle<()>>,
}

impl<T: Real> BatchProducer<T> {
    pub fn spawn(sources: Arc<Vec<Tensor<T>>>, spec: BatchSpec, seed: u64, count: usize, capacity: usize) -> Self {
        let (tx, rx) = sync_channel(capacity.max(1));
        let handle = std::thread::spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..count {
                let batch = draw_batch(&sources, &spec, &mut rng);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });
        Self { rx, handle: Some(handle) }
    }

    pub fn next_batch(&mut self) -> Result<Batch<T>> {
        self.rx.recv().map_err(|_| Error::Usage("batch producer finished early".into()))?
    }
}

impl<T: Real> Drop for BatchProducer<T> {
    fn drop(&mut self) {
        // Unblock the producer by dropping the receiver first.
        let (_, dummy) = sync_channel(1);
        drop(std::mem::replace(&mut self.rx, dummy));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textures_stay_in_unit_range() {
        let imgs: Vec<Tensor<f64>> = procedural_set(8, 32, 3).unwrap();
        for img in &imgs {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn oversized_patch_is_a_usage_error() {
        let t = Tensor::<f64>::zeros(Shape::new(1, 3, 8, 8).unwrap());
        let pair = ImagePair::new(t.clone(), t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_patch(&pair, 9, &mut rng), Err(Error::Usage(_))));
    }

    #[test]
    fn producer_matches_direct_draws() {
        let sources = Arc::new(procedural_set::<f32>(3, 16, 1).unwrap());
        let spec = BatchSpec {
            patch_size: 8,
            batch_size: 2,
            augment_flips: true,
            degradation: DegradeKind::GaussianNoise { sigma: 0.1 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = BatchProducer::spawn(sources.clone(), spec.clone(), 9, 3, 1);
        for _ in 0..3 {
            let a = draw_batch(&sources, &spec, &mut rng).unwrap();
            let b = p.next_batch().unwrap();
            assert_eq!(a.degraded, b.degraded);
            assert_eq!(a.clean, b.clean);
        }
        assert!(p.next_batch().is_err());
    }
}
