//! Training and evaluation loops.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use crate::autograd::Graph;
use crate::checkpoint;
use crate::config::Config;
use crate::data::{load_dir, procedural_set, Batch, BatchProducer, BatchSpec, ImagePair};
use crate::degrade::DegradeKind;
use crate::error::{usage_err, Error, Result};
use crate::loss::{loss_and_backward, LossConfig, LossReport};
use crate::metrics::{ColorSpace, MetricReport};
use crate::model::MprNet;
use crate::optim::{adam_step, cosine_lr, AdamState, OptimConfig};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub iters: usize,
    pub seed: u64,
    pub augment_flips: bool,
    /// Validate (and possibly checkpoint) every this many iterations.
    pub val_every: usize,
    pub degradation: DegradeKind,
    /// Number of procedural clean images for training and validation.
    pub train_images: usize,
    pub val_images: usize,
    /// Side length of procedural images.
    pub image_size: usize,
    /// Extra clean training images.
    pub data_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            batch_size: 4,
            iters: 1000,
            seed: 0,
            augment_flips: true,
            val_every: 100,
            degradation: DegradeKind::GaussianNoise { sigma: 25.0 / 255.0 },
            train_images: 32,
            val_images: 8,
            image_size: 64,
            data_dir: None,
            log_path: None,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, required_multiple: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.patch_size % required_multiple != 0 {
            return bad(format!("patch_size {} must be a positive multiple of {required_multiple}", self.patch_size));
        }
        if self.image_size < self.patch_size {
            return bad(format!("image_size {} is smaller than patch_size {}", self.image_size, self.patch_size));
        }
        if self.batch_size == 0 || self.iters == 0 || self.val_every == 0 {
            return bad("batch_size, iters and val_every must be positive".into());
        }
        if self.train_images == 0 && self.data_dir.is_none() {
            return bad("no training images: set train_images or data_dir".into());
        }
        self.degradation.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Stage selection for [`evaluate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageSelect {
    All,
    Exit(usize),
}

/// Mean metrics of one stage over a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct StageMetrics {
    pub stage: usize,
    pub report: MetricReport,
}

/// Mean PSNR/SSIM of the requested stage outputs over `pairs`.
pub fn evaluate<T: Real>(
    model: &MprNet<T>,
    pairs: &[ImagePair<T>],
    select: StageSelect,
    space: ColorSpace,
) -> Result<Vec<StageMetrics>> {
    if pairs.is_empty() {
        return Err(usage_err!("evaluation needs at least one image pair"));
    }
    let n_stages = model.config().n_stages;
    let (stages, exit): (Vec<usize>, Option<usize>) = match select {
        StageSelect::All => ((1..=n_stages).collect(), None),
        StageSelect::Exit(k) if (1..=n_stages).contains(&k) => (vec![k], Some(k)),
        StageSelect::Exit(k) => return Err(usage_err!("exit stage {k} outside 1..={n_stages}")),
    };
    let mut sums = vec![(0.0, 0.0); stages.len()];
    for pair in pairs {
        let outs = model.restore(&pair.degraded, exit)?;
        for (acc, out) in sums.iter_mut().zip(&outs) {
            let r = MetricReport::compute(out, &pair.clean, space)?;
            acc.0 += r.psnr;
            acc.1 += r.ssim;
        }
    }
    let n = pairs.len() as f64;
    Ok(stages
        .into_iter()
        .zip(sums)
        .map(|(stage, (p, s))| StageMetrics { stage, report: MetricReport { psnr: p / n, ssim: s / n, evaluated_on: space } })
        .collect())
}

/// Mean metrics of the degraded inputs themselves.
pub fn input_metrics<T: Real>(pairs: &[ImagePair<T>], space: ColorSpace) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(usage_err!("evaluation needs at least one image pair"));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for pair in pairs {
        let r = MetricReport::compute(&pair.degraded, &pair.clean, space)?;
        p += r.psnr;
        s += r.ssim;
    }
    let n = pairs.len() as f64;
    Ok(MetricReport { psnr: p / n, ssim: s / n, evaluated_on: space })
}

/// The fixed validation set implied by a config.
pub fn validation_pairs<T: Real>(cfg: &TrainConfig) -> Result<Vec<ImagePair<T>>> {
    let clean = procedural_set::<T>(cfg.val_images, cfg.image_size, cfg.seed.wrapping_add(VAL_STREAM))?;
    clean
        .into_iter()
        .enumerate()
        .map(|(i, c)| ImagePair::synthesize(c, &cfg.degradation, cfg.seed.wrapping_add(VAL_STREAM) ^ (i as u64 + 1) << 32))
        .collect()
}

const TRAIN_STREAM: u64 = 0x7472_6169_6e00;
const VAL_STREAM: u64 = 0x7661_6c00;
const BATCH_STREAM: u64 = 0x6261_7463_6800;

/// One optimization step on `batch`. Returns the loss terms before the update.
pub fn train_step<T: Real>(
    model: &mut MprNet<T>,
    state: &mut AdamState<T>,
    batch: &Batch<T>,
    lr: f64,
    optim: &OptimConfig,
    loss: &LossConfig,
) -> Result<LossReport> {
    let mut g = Graph::new();
    let x = g.input(batch.degraded.clone());
    let y = g.input(batch.clean.clone());
    let outs = model.forward(&mut g, x)?;
    let report = loss_and_backward(&mut g, &outs, y, loss, model.params_mut())?;
    let finite = report.total.is_finite() && report.charbonnier.iter().chain(&report.edge).all(|v| v.is_finite());
    if finite {
        // Parameters the loss does not reach (an unsupervised head, the
        // feature branch of a final SAM) get a zero gradient.
        model.params_mut().fill_missing_grads();
        adam_step(model.params_mut(), state, lr, optim)?;
    }
    model.params_mut().zero_grads();
    if !finite {
        return Err(Error::NonFinite { iter: state.t as usize + 1, detail: format!("loss terms {report:?}") });
    }
    Ok(report)
}

/// One validation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    pub iter: usize,
    pub stages: Vec<StageMetrics>,
}

impl Validation {
    pub fn final_psnr(&self) -> f64 {
        self.stages.last().map_or(f64::NAN, |s| s.report.psnr)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Log lines, one per iteration, without trailing newlines.
    pub log: Vec<String>,
    /// FNV-1a 64 of the log text.
    pub checksum: u64,
    pub validations: Vec<Validation>,
    pub best_psnr: f64,
    pub input_psnr: f64,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn format_log_line(iter: usize, r: &LossReport, lr: f64) -> String {
    let mut line = format!("{iter} {:.9e}", r.total);
    for (c, e) in r.charbonnier.iter().zip(&r.edge) {
        line.push_str(&format!(" {c:.9e} {e:.9e}"));
    }
    line.push_str(&format!(" {lr:.9e}"));
    line
}

/// Trains `model` in place following `cfg`.
///
/// Training pairs are drawn on a producer thread. The log is written
/// per-iteration to `log_path` when set; the checkpoint at `checkpoint_path`
/// is replaced whenever the final-stage validation PSNR improves.
pub fn train<T: Real>(model: &mut MprNet<T>, cfg: &Config) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.config() != &cfg.model {
        return Err(usage_err!("model architecture does not match the config"));
    }
    let tc = &cfg.train;
    let mut sources = procedural_set::<T>(tc.train_images, tc.image_size, tc.seed.wrapping_add(TRAIN_STREAM))?;
    if let Some(dir) = &tc.data_dir {
        sources.extend(load_dir::<T>(dir)?.into_iter().filter(|img| img.shape().h >= tc.patch_size && img.shape().w >= tc.patch_size));
    }
    if sources.is_empty() {
        return Err(usage_err!("no training images at least {0}×{0}", tc.patch_size));
    }
    let val = validation_pairs::<T>(tc)?;
    let input_psnr = input_metrics(&val, ColorSpace::Rgb)?.psnr;
    let spec = BatchSpec {
        patch_size: tc.patch_size,
        batch_size: tc.batch_size,
        augment_flips: tc.augment_flips,
        degradation: tc.degradation.clone(),
    };
    let mut producer = BatchProducer::spawn(Arc::new(sources), spec, tc.seed.wrapping_add(BATCH_STREAM), tc.iters, 2);
    let mut log_file = match &tc.log_path {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut state = AdamState::new(model.params());
    let mut outcome = TrainOutcome {
        log: Vec::with_capacity(tc.iters),
        checksum: 0,
        validations: Vec::new(),
        best_psnr: f64::NEG_INFINITY,
        input_psnr,
        first_loss: f64::NAN,
        last_loss: f64::NAN,
    };
    let mut text = String::new();
    for iter in 1..=tc.iters {
        let batch = producer.next_batch()?;
        let lr = cosine_lr((iter - 1).min(cfg.optim.total_iters), &cfg.optim)?;
        let report = match train_step(model, &mut state, &batch, lr, &cfg.optim, &cfg.loss) {
            Err(Error::NonFinite { detail, .. }) => return Err(Error::NonFinite { iter, detail }),
            other => other?,
        };
        if iter == 1 {
            outcome.first_loss = report.total;
        }
        outcome.last_loss = report.total;
        let line = format_log_line(iter, &report, lr);
        text.push_str(&line);
        text.push('\n');
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{line}")?;
        }
        outcome.log.push(line);

        if iter % tc.val_every == 0 || iter == tc.iters {
            let stages = evaluate(model, &val, StageSelect::All, ColorSpace::Rgb)?;
            let v = Validation { iter, stages };
            if v.final_psnr() > outcome.best_psnr {
                outcome.best_psnr = v.final_psnr();
                if let Some(p) = &tc.checkpoint_path {
                    checkpoint::save(p, model, cfg)?;
                }
            }
            outcome.validations.push(v);
        }
    }
    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }
    outcome.checksum = fnv1a(text.as_bytes());
    Ok(outcome)
}

/// Stacks a list of images into a batch.
pub fn batch_of<T: Real>(degraded: &[Tensor<T>], clean: &[Tensor<T>]) -> Result<Batch<T>> {
    Ok(Batch { degraded: Tensor::stack(degraded)?, clean: Tensor::stack(clean)? })
}
