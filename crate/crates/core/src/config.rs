//! Flat `key = value` configuration covering model, training, optimizer and
//! loss settings.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors.
//! `total_iters` follows `iters` unless set explicitly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::degrade::parse_real;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ModelConfig;
use crate::optim::OptimConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    explicit_total_iters: bool,
}

impl Default for Config {
    fn default() -> Self {
        let train = TrainConfig::default();
        let optim = OptimConfig { total_iters: train.iters, ..Default::default() };
        Self { model: ModelConfig::default(), train, optim, loss: LossConfig::default(), explicit_total_iters: false }
    }
}

/// Every recognised key, in output order.
pub const KEYS: &[&str] = &[
    "base_width",
    "n_scales",
    "n_cabs_per_scale",
    "n_orbs",
    "n_cabs_per_orb",
    "cab_reduction",
    "n_stages",
    "use_sam",
    "use_csff",
    "activation",
    "precision",
    "patch_size",
    "batch_size",
    "iters",
    "seed",
    "augment_flips",
    "val_every",
    "degradation",
    "train_images",
    "val_images",
    "image_size",
    "data_dir",
    "log_path",
    "checkpoint_path",
    "lr_init",
    "lr_final",
    "total_iters",
    "beta1",
    "beta2",
    "adam_eps",
    "epsilon",
    "lambda_edge",
];

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got `{v}`"))),
    }
}

fn parse_int<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse().map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got `{v}`")))
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one override. Unknown keys name the key in the error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        let real = |v: &str| parse_real(v).map_err(|_| Error::Config(format!("{key}: expected a number, got `{v}`")));
        match key {
            "base_width" => self.model.base_width = parse_int(key, v)?,
            "n_scales" => self.model.n_scales = parse_int(key, v)?,
            "n_cabs_per_scale" => self.model.n_cabs_per_scale = parse_int(key, v)?,
            "n_orbs" => self.model.n_orbs = parse_int(key, v)?,
            "n_cabs_per_orb" => self.model.n_cabs_per_orb = parse_int(key, v)?,
            "cab_reduction" => self.model.cab_reduction = parse_int(key, v)?,
            "n_stages" => self.model.n_stages = parse_int(key, v)?,
            "use_sam" => self.model.use_sam = parse_bool(key, v)?,
            "use_csff" => self.model.use_csff = parse_bool(key, v)?,
            "activation" => self.model.activation = v.parse()?,
            "precision" => self.model.precision = v.parse()?,
            "patch_size" => self.train.patch_size = parse_int(key, v)?,
            "batch_size" => self.train.batch_size = parse_int(key, v)?,
            "iters" => {
                self.train.iters = parse_int(key, v)?;
                if !self.explicit_total_iters {
                    self.optim.total_iters = self.train.iters;
                }
            }
            "seed" => self.train.seed = parse_int(key, v)?,
            "augment_flips" => self.train.augment_flips = parse_bool(key, v)?,
            "val_every" => self.train.val_every = parse_int(key, v)?,
            "degradation" => self.train.degradation = v.parse()?,
            "train_images" => self.train.train_images = parse_int(key, v)?,
            "val_images" => self.train.val_images = parse_int(key, v)?,
            "image_size" => self.train.image_size = parse_int(key, v)?,
            "data_dir" => self.train.data_dir = parse_path(v),
            "log_path" => self.train.log_path = parse_path(v),
            "checkpoint_path" => self.train.checkpoint_path = parse_path(v),
            "lr_init" => self.optim.lr_init = real(v)?,
            "lr_final" => self.optim.lr_final = real(v)?,
            "total_iters" => {
                self.optim.total_iters = parse_int(key, v)?;
                self.explicit_total_iters = true;
            }
            "beta1" => self.optim.beta1 = real(v)?,
            "beta2" => self.optim.beta2 = real(v)?,
            "adam_eps" => self.optim.adam_eps = real(v)?,
            "epsilon" => self.loss.epsilon = real(v)?,
            "lambda_edge" => self.loss.lambda_edge = real(v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(self.model.required_multiple())?;
        self.optim.validate()?;
        self.loss.validate()
    }

    /// Value of `key` as it would be written in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(String::new, |p| p.display().to_string());
        Some(match key {
            "base_width" => self.model.base_width.to_string(),
            "n_scales" => self.model.n_scales.to_string(),
            "n_cabs_per_scale" => self.model.n_cabs_per_scale.to_string(),
            "n_orbs" => self.model.n_orbs.to_string(),
            "n_cabs_per_orb" => self.model.n_cabs_per_orb.to_string(),
            "cab_reduction" => self.model.cab_reduction.to_string(),
            "n_stages" => self.model.n_stages.to_string(),
            "use_sam" => self.model.use_sam.to_string(),
            "use_csff" => self.model.use_csff.to_string(),
            "activation" => self.model.activation.to_string(),
            "precision" => self.model.precision.to_string(),
            "patch_size" => self.train.patch_size.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "iters" => self.train.iters.to_string(),
            "seed" => self.train.seed.to_string(),
            "augment_flips" => self.train.augment_flips.to_string(),
            "val_every" => self.train.val_every.to_string(),
            "degradation" => self.train.degradation.to_string(),
            "train_images" => self.train.train_images.to_string(),
            "val_images" => self.train.val_images.to_string(),
            "image_size" => self.train.image_size.to_string(),
            "data_dir" => path(&self.train.data_dir),
            "log_path" => path(&self.train.log_path),
            "checkpoint_path" => path(&self.train.checkpoint_path),
            "lr_init" => self.optim.lr_init.to_string(),
            "lr_final" => self.optim.lr_final.to_string(),
            "total_iters" => self.optim.total_iters.to_string(),
            "beta1" => self.optim.beta1.to_string(),
            "beta2" => self.optim.beta2.to_string(),
            "adam_eps" => self.optim.adam_eps.to_string(),
            "epsilon" => self.loss.epsilon.to_string(),
            "lambda_edge" => self.loss.lambda_edge.to_string(),
            _ => return None,
        })
    }

    /// Every key, one `key=value` line each. Parsing the result gives back an
    /// equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("listed key"));
        }
        out
    }
}
