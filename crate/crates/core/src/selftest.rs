//! Fast invariant suite behind the `selftest` command.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad_check, GradCheckConfig, Graph, OpKind};
use crate::config::Config;
use crate::error::Result;
use crate::loss::{total_loss, LossConfig};
use crate::metrics::{psnr, rgb_to_y, ssim};
use crate::model::{merge_patches, split_patches, ModelConfig, MprNet};
use crate::nn::{ActKind, Cab};
use crate::optim::{cosine_lr, OptimConfig};
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug)]
pub struct GroupResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SelftestReport {
    pub groups: Vec<GroupResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            writeln!(f, "{} {}: {}", if g.passed { "PASS" } else { "FAIL" }, g.name, g.detail)?;
        }
        Ok(())
    }
}

const GRAD_TOL: f64 = 1e-4;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        base_width: 4,
        n_scales: 2,
        n_cabs_per_scale: 1,
        n_orbs: 2,
        n_cabs_per_orb: 1,
        cab_reduction: 2,
        ..Default::default()
    }
}

fn image(shape: Shape, seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Doubles every parameter. Default-initialized deep stacks have some
/// gradients near 1e-8, where central differences are dominated by rounding;
/// doubling lifts them clear of that floor.
pub fn amplify(store: &mut ParamStore<f64>) {
    store.iter_mut().for_each(|p| p.tensor.data_mut().iter_mut().for_each(|v| *v *= 2.0));
}

/// Gradient checks of a CAB and a tiny three-stage model. `fault` scales the
/// convolution backward rule.
fn gradients(fault: Option<f64>) -> Result<(bool, String)> {
    let cfg = GradCheckConfig { step: 1e-5, samples_per_param: 4, seed: 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let cab = Cab::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 2, ActKind::Prelu)?;
    amplify(&mut store);
    let x = image(Shape::new(2, 4, 5, 5)?, 4);
    let y = image(Shape::new(2, 4, 5, 5)?, 5);
    let cab_err = grad_check(&mut store, &cfg, |g, ps| {
        if let Some(s) = fault {
            g.inject_fault(OpKind::Conv2d, s);
        }
        let (xi, yi) = (g.input(x.clone()), g.input(y.clone()));
        let out = cab.forward(g, ps, xi)?;
        g.charbonnier(out, yi, 1e-3)
    })?
    .max_rel_error;

    let model = MprNet::<f64>::new(tiny_model(), 7)?;
    let mut store = model.params().clone();
    amplify(&mut store);
    let img = image(Shape::new(1, 3, 8, 8)?, 8);
    let target = image(Shape::new(1, 3, 8, 8)?, 9);
    let model_err = grad_check(&mut store, &cfg, |g, ps| {
        if let Some(s) = fault {
            g.inject_fault(OpKind::Conv2d, s);
        }
        let (xi, yi) = (g.input(img.clone()), g.input(target.clone()));
        let outs = model.forward_with(g, ps, xi, 3)?;
        Ok(total_loss(g, &outs, yi, &LossConfig::default())?.total)
    })?
    .max_rel_error;
    let ok = cab_err < GRAD_TOL && model_err < GRAD_TOL;
    Ok((ok, format!("max relative error CAB {cab_err:.2e}, model {model_err:.2e} (limit {GRAD_TOL:.0e})")))
}

fn zero_model() -> Result<(bool, String)> {
    let model = MprNet::<f64>::zeroed(ModelConfig { n_stages: 3, ..tiny_model() })?;
    let img = image(Shape::new(1, 3, 8, 8)?, 11);
    let mut g = Graph::new();
    let x = g.input(img.clone());
    let outs = model.forward(&mut g, x)?;
    let identity = outs.iter().all(|o| g.value(o.x_s) == &img);
    let loss = total_loss(&mut g, &outs, x, &LossConfig::default())?.report(&g).total;
    let ok = identity && loss == 3.0 * (1e-3 + 0.05 * 1e-3);
    Ok((ok, format!("stage outputs equal input: {identity}, total loss {loss:e}")))
}

fn round_trips() -> Result<(bool, String)> {
    let img = image(Shape::new(2, 3, 8, 12)?, 13);
    let mut patches_ok = true;
    for stage in 1..=3 {
        patches_ok &= merge_patches(&split_patches(&img, stage)?, stage)? == img;
    }
    let mut buf = Vec::new();
    img.write_text(&mut buf)?;
    let text_ok = Tensor::<f64>::read_text(&buf[..])? == img;
    let cfg = Config::default();
    let cfg_ok = Config::parse(&cfg.to_text())?.to_text() == cfg.to_text();
    let ok = patches_ok && text_ok && cfg_ok;
    Ok((ok, format!("patch split/merge {patches_ok}, tensor text {text_ok}, config text {cfg_ok}")))
}

fn metrics_and_schedule() -> Result<(bool, String)> {
    let shape = Shape::new(1, 1, 16, 16)?;
    let x = Tensor::<f64>::zeros(shape);
    let y = Tensor::full(shape, 0.1);
    let p = psnr(&x, &y, 1.0)?;
    let s = ssim(&y, &y)?;
    let green = rgb_to_y(&Tensor::<f64>::from_vec([1, 3, 1, 1], vec![0.0, 1.0, 0.0])?)?.data()[0];
    let oc = OptimConfig::default();
    let ends = cosine_lr(0, &oc)? == 2e-4 && cosine_lr(oc.total_iters, &oc)? == 1e-6;
    let ok = p == 20.0 && s == 1.0 && green == 0.587 && ends;
    Ok((ok, format!("psnr {p}, ssim {s}, luma(green) {green}, schedule endpoints {ends}")))
}

/// Runs every group. With `inject_fault`, convolution gradients are scaled
/// by 1.1 so the gradient group must fail.
pub fn run(inject_fault: bool) -> SelftestReport {
    let fault = inject_fault.then_some(1.1);
    let groups: Vec<(&'static str, Result<(bool, String)>)> = vec![
        ("gradients", gradients(fault)),
        ("zero-model identities", zero_model()),
        ("round trips", round_trips()),
        ("metrics and schedule", metrics_and_schedule()),
    ];
    let groups = groups
        .into_iter()
        .map(|(name, r)| match r {
            Ok((passed, detail)) => GroupResult { name, passed, detail },
            Err(e) => GroupResult { name, passed: false, detail: format!("error: {e}") },
        })
        .collect();
    SelftestReport { groups }
}
