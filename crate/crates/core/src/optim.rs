//! Adam with a cosine-annealed learning rate.

use std::f64::consts::PI;

use crate::error::{usage_err, Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub total_iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr_init: 2e-4, lr_final: 1e-6, total_iters: 1000, beta1: 0.9, beta2: 0.999, adam_eps: 1e-8 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_init) {
            return Err(Error::Config(format!(
                "learning rates need 0 < lr_final <= lr_init, got {} and {}",
                self.lr_final, self.lr_init
            )));
        }
        if self.total_iters == 0 {
            return Err(Error::Config("total_iters must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam needs betas in [0, 1) and a positive epsilon".into()));
        }
        Ok(())
    }
}

/// `lr_final + ½ (lr_init − lr_final)(1 + cos(π t / T))` for `0 ≤ t ≤ T`.
///
/// The endpoints are exact and the sequence is non-increasing in `t`.
pub fn cosine_lr(t: usize, cfg: &OptimConfig) -> Result<f64> {
    if t > cfg.total_iters {
        return Err(usage_err!("iteration {t} beyond schedule length {}", cfg.total_iters));
    }
    if t == 0 {
        return Ok(cfg.lr_init);
    }
    let w = 0.5 * (1.0 + (PI * t as f64 / cfg.total_iters as f64).cos());
    let lr = cfg.lr_final + (cfg.lr_init - cfg.lr_final) * w;
    Ok(lr.clamp(cfg.lr_final, cfg.lr_init))
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![T::zero(); p.tensor.numel()]).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }
}

/// One bias-corrected Adam update of every parameter from its gradient slot.
/// Gradients are left in place; zero them before the next accumulation.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64, cfg: &OptimConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(usage_err!("Adam state tracks {} parameters, store has {}", state.m.len(), params.len()));
    }
    if let Some((_, p)) = params.iter().find(|(_, p)| p.tensor.grad().is_none()) {
        return Err(usage_err!("parameter `{}` has no gradient", p.name));
    }
    state.t += 1;
    let step = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(step);
    let bc2 = 1.0 - cfg.beta2.powi(step);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let (bc1, bc2) = (T::of(bc1), T::of(bc2));
    let (lr, eps) = (T::of(lr), T::of(cfg.adam_eps));
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.tensor.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = b1 * m[j] + one_b1 * g;
            v[j] = b2 * v[j] + one_b2 * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
