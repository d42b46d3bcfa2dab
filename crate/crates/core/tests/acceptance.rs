//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stderr
//! (uncaptured) before asserting.
//!
//! The training criteria share five runs, computed once. Tests hold a global
//! lock so timing budgets are measured without competing test threads.

mod common;

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use common::*;
use mprnet::autograd::{grad_check, GradCheckConfig, Graph, Var};
use mprnet::checkpoint;
use mprnet::config::Config;
use mprnet::loss::{charbonnier_value, total_loss, LossConfig};
use mprnet::metrics::{error_reduction_psnr, error_reduction_ssim, psnr, rgb_to_y, ssim};
use mprnet::model::{merge_patches, split_patches, Bridge, ModelConfig, MprNet};
use mprnet::nn::{ActKind, Cab, EncoderDecoder, Orb, Sam};
use mprnet::optim::{cosine_lr, OptimConfig};
use mprnet::params::{ParamBuilder, ParamStore};
use mprnet::selftest::amplify;
use mprnet::train::{train, TrainOutcome};
use mprnet::{Shape, Tensor};
use rand::Rng;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, pass: bool, detail: &str) {
    let line = format!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    writeln!(std::io::stderr(), "{line}").unwrap();
    assert!(pass, "{line}");
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(60);

fn tiny() -> ModelConfig {
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

fn primitive_errors() -> Vec<(&'static str, f64)> {
    type Build = Box<dyn Fn(&mut Graph<f64>, Var, Var) -> mprnet::Result<Var>>;
    let cases: Vec<(&str, Build)> = vec![
        ("conv2d", Box::new(|g, a, _| {
            let w = g.input(rand_t([2, 3, 3, 3], 40));
            let b = g.input(rand_t([1, 2, 1, 1], 41));
            g.conv2d(a, w, Some(b), 1, 1)
        })),
        ("conv2d stride 2", Box::new(|g, a, _| {
            let w = g.input(rand_t([2, 3, 2, 2], 42));
            g.conv2d(a, w, None, 2, 0)
        })),
        ("max_pool2", Box::new(|g, a, _| g.max_pool2(a))),
        ("upsample_bilinear2", Box::new(|g, a, _| g.upsample_bilinear2(a))),
        ("global_avg_pool", Box::new(|g, a, _| g.global_avg_pool(a))),
        ("relu", Box::new(|g, a, _| g.relu(a))),
        ("prelu", Box::new(|g, a, b| {
            let s = g.narrow(b, 2, 0, 1)?;
            let s = g.narrow(s, 3, 0, 1)?;
            let s = g.narrow(s, 1, 0, 1)?;
            let s = g.narrow(s, 0, 0, 1)?;
            g.prelu(a, s)
        })),
        ("sigmoid", Box::new(|g, a, _| g.sigmoid(a))),
        ("add", Box::new(|g, a, b| g.add(a, b))),
        ("sub", Box::new(|g, a, b| g.sub(a, b))),
        ("mul", Box::new(|g, a, b| g.mul(a, b))),
        ("mul_channel", Box::new(|g, a, b| {
            let gate = g.global_avg_pool(b)?;
            g.mul_channel(a, gate)
        })),
        ("concat", Box::new(|g, a, b| g.concat_channels(a, b))),
        ("narrow", Box::new(|g, a, _| g.narrow(a, 2, 1, 2))),
        ("laplacian", Box::new(|g, a, _| g.laplacian(a))),
        ("scale", Box::new(|g, a, _| g.scale(a, -1.5))),
        ("charbonnier", Box::new(|g, a, b| g.charbonnier(a, b, 1e-3))),
    ];
    let cfg = GradCheckConfig { step: 1e-6, samples_per_param: 96, seed: 1 };
    cases
        .into_iter()
        .map(|(name, build)| {
            let mut ps = ParamStore::new();
            ps.add("a", rand_t([2, 3, 4, 4], 20)).unwrap();
            ps.add("b", rand_t([2, 3, 4, 4], 21)).unwrap();
            let r = grad_check(&mut ps, &cfg, |g, ps| {
                let (a, b) = (g.param(ps, ps.id("a").unwrap()), g.param(ps, ps.id("b").unwrap()));
                let out = build(g, a, b)?;
                let s = g.sigmoid(out)?;
                let s2 = g.mul(s, out)?;
                g.sum(s2)
            })
            .unwrap();
            (name, r.max_rel_error)
        })
        .collect()
}

fn block_errors() -> Vec<(&'static str, f64)> {
    let cfg = GradCheckConfig { step: 1e-5, samples_per_param: 6, seed: 3 };
    let x = unit_t([1, 4, 4, 4], 41);
    let y = unit_t([1, 4, 4, 4], 40);
    let img = unit_t([1, 3, 4, 4], 44);
    let mut out = Vec::new();
    let mut r = rng(50);

    let mut ps = ParamStore::new();
    let cab = Cab::new(&mut ParamBuilder::new(&mut ps, &mut r), 4, 2, ActKind::Prelu).unwrap();
    amplify(&mut ps);
    let e = grad_check(&mut ps, &cfg, |g, ps| {
        let (xi, yi) = (g.input(x.clone()), g.input(y.clone()));
        let o = cab.forward(g, ps, xi)?;
        g.charbonnier(o, yi, 1e-3)
    });
    out.push(("CAB", e.unwrap().max_rel_error));

    let mut ps = ParamStore::new();
    let orb = Orb::new(&mut ParamBuilder::new(&mut ps, &mut r), 4, 2, 2, ActKind::Prelu).unwrap();
    amplify(&mut ps);
    let e = grad_check(&mut ps, &cfg, |g, ps| {
        let (xi, yi) = (g.input(x.clone()), g.input(y.clone()));
        let o = orb.forward(g, ps, xi)?;
        g.charbonnier(o, yi, 1e-3)
    });
    out.push(("ORB", e.unwrap().max_rel_error));

    let mut ps = ParamStore::new();
    let sam = Sam::new(&mut ParamBuilder::new(&mut ps, &mut r), 4).unwrap();
    amplify(&mut ps);
    let e = grad_check(&mut ps, &cfg, |g, ps| {
        let (xi, ii, yi) = (g.input(x.clone()), g.input(img.clone()), g.input(y.clone()));
        let o = sam.forward(g, ps, xi, ii)?;
        let l1 = g.charbonnier(o.f_out, yi, 1e-3)?;
        let l2 = g.charbonnier(o.x_s, ii, 1e-3)?;
        g.add(l1, l2)
    });
    out.push(("SAM", e.unwrap().max_rel_error));

    let mut ps = ParamStore::new();
    let ed = EncoderDecoder::new(&mut ParamBuilder::new(&mut ps, &mut r), 4, 2, 1, 2, ActKind::Prelu).unwrap();
    amplify(&mut ps);
    let e = grad_check(&mut ps, &cfg, |g, ps| {
        let (xi, yi) = (g.input(x.clone()), g.input(y.clone()));
        let o = ed.forward(g, ps, xi, None)?;
        g.charbonnier(o.features, yi, 1e-3)
    });
    out.push(("2-scale encoder-decoder", e.unwrap().max_rel_error));

    let model = MprNet::<f64>::new(ModelConfig { base_width: 2, ..tiny() }, 12).unwrap();
    let mut ps = model.params().clone();
    amplify(&mut ps);
    let (im, target) = (unit_t([1, 3, 16, 16], 13), unit_t([1, 3, 16, 16], 14));
    let e = grad_check(&mut ps, &GradCheckConfig { step: 1e-5, samples_per_param: 3, seed: 2 }, |g, ps| {
        let (xi, yi) = (g.input(im.clone()), g.input(target.clone()));
        let outs = model.forward_with(g, ps, xi, 3)?;
        Ok(total_loss(g, &outs, yi, &LossConfig::default())?.total)
    });
    out.push(("tiny 3-stage model", e.unwrap().max_rel_error));
    out
}

#[test]
fn criterion_01_gradient_suite() {
    let _g = serial();
    let start = Instant::now();
    let mut errors = primitive_errors();
    errors.extend(block_errors());
    let elapsed = start.elapsed();
    let (worst_name, worst) = errors.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let failing: Vec<_> = errors.iter().filter(|(_, e)| !(*e < GRAD_TOL)).map(|(n, _)| *n).collect();
    let pass = failing.is_empty() && elapsed < GRAD_BUDGET;
    report(
        1,
        pass,
        &format!(
            "{} checks, worst relative error {worst:.2e} ({worst_name}), limit {GRAD_TOL:.0e}, failing {failing:?}, {:.1}s of {}s",
            errors.len(),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Zero-model identity

#[test]
fn criterion_02_zero_model_identity() {
    let _g = serial();
    let model = MprNet::<f64>::zeroed(ModelConfig { precision: mprnet::model::Precision::F64, ..Default::default() }).unwrap();
    let img = unit_t([1, 3, 16, 16], 60);
    let mut g = Graph::new();
    let x = g.input(img.clone());
    let outs = model.forward(&mut g, x).unwrap();
    let identity = outs.len() == 3 && outs.iter().all(|o| g.value(o.x_s) == &img);

    let Bridge::Sam(sam) = &model.stage1().bridge else { panic!("default model uses SAM") };
    let feats = g.input(rand_t([1, 16, 16, 16], 61));
    let mask = sam.forward(&mut g, model.params(), feats, x).unwrap().mask;
    let mask_half = g.value(mask).data().iter().all(|&m| m == 0.5);

    let loss = total_loss(&mut g, &outs, x, &LossConfig::default()).unwrap().report(&g).total;
    let expected = 3.0 * (1e-3 + 0.05 * 1e-3);
    let pass = identity && mask_half && loss == expected && loss == 3.15e-3;
    report(2, pass, &format!("X1=X2=X3=input {identity}, mask=0.5 {mask_half}, loss {loss:e} (expected {expected:e})"));
}

// ---------------------------------------------------------------------------
// 3. Error-reduction arithmetic

#[test]
fn criterion_03_error_reduction() {
    let _g = serial();
    let cases = [
        ("psnr 30.75->32.73", 100.0 * error_reduction_psnr(30.75, 32.73), 20.4),
        ("ssim 0.903->0.921", 100.0 * error_reduction_ssim(0.903, 0.921).unwrap(), 18.6),
        ("psnr 21.00->32.66", 100.0 * error_reduction_psnr(21.00, 32.66), 73.9),
    ];
    let pass = cases.iter().all(|(_, got, want)| (got - want).abs() <= 0.1);
    let detail: Vec<_> = cases.iter().map(|(n, got, want)| format!("{n}: {got:.2}% (want {want}%)")).collect();
    report(3, pass, &format!("{}, tolerance 0.1 pp", detail.join(", ")));
}

// ---------------------------------------------------------------------------
// 4. Multi-patch round trip

#[test]
fn criterion_04_patch_round_trip() {
    let _g = serial();
    let mut r = rng(70);
    let mut trials = 0;
    let mut ok = true;
    for i in 0..50 {
        let (n, h, w) = (r.random_range(1..3), 2 * r.random_range(1..20), 2 * r.random_range(1..20));
        let img = rand_t([n, 3, h, w], 100 + i);
        for stage in 1..=3 {
            ok &= merge_patches(&split_patches(&img, stage).unwrap(), stage).unwrap() == img;
            trials += 1;
        }
    }
    report(4, ok, &format!("merge(split(x)) == x bitwise in {trials} randomized trials"));
}

// ---------------------------------------------------------------------------
// 5. Cosine schedule

#[test]
fn criterion_05_cosine_schedule() {
    let _g = serial();
    let cfg = OptimConfig { total_iters: 100_000, ..Default::default() };
    let (start, end) = (cosine_lr(0, &cfg).unwrap(), cosine_lr(cfg.total_iters, &cfg).unwrap());
    let mut r = rng(80);
    let mut ts: Vec<usize> = (0..10_000).map(|_| r.random_range(0..=cfg.total_iters)).collect();
    ts.sort_unstable();
    let lrs: Vec<f64> = ts.iter().map(|&t| cosine_lr(t, &cfg).unwrap()).collect();
    let monotone = lrs.windows(2).all(|w| w[1] <= w[0]);
    let pass = start == 2e-4 && end == 1e-6 && monotone;
    report(5, pass, &format!("lr(0)={start:e}, lr(T)={end:e}, non-increasing over 10000 samples {monotone}"));
}

// ---------------------------------------------------------------------------
// Shared toy training runs (criteria 6, 7, 8)

const TOY_ITERS: usize = 3000;
const RUN_BUDGET: Duration = Duration::from_secs(20 * 60);

fn toy_config(overrides: &[&str]) -> Config {
    let mut cfg = Config::default();
    let base = [
        "base_width=8",
        "n_stages=3",
        "degradation=gaussian_noise:25/255",
        "image_size=64",
        "patch_size=16",
        "batch_size=4",
        "lr_init=5e-4",
        "seed=0",
    ];
    let mut all: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    all.push(format!("iters={TOY_ITERS}"));
    all.push(format!("val_every={}", TOY_ITERS / 3));
    all.extend(overrides.iter().map(|s| s.to_string()));
    cfg.apply_overrides(&all).unwrap();
    cfg
}

struct Run {
    label: &'static str,
    model: MprNet<f32>,
    outcome: TrainOutcome,
    elapsed: Duration,
}

impl Run {
    fn final_psnr(&self) -> f64 {
        self.outcome.validations.last().unwrap().final_psnr()
    }
}

fn run(label: &'static str, overrides: &[&str]) -> Run {
    let cfg = toy_config(overrides);
    let mut model = MprNet::<f32>::new(cfg.model.clone(), cfg.train.seed).unwrap();
    let start = Instant::now();
    let outcome = train(&mut model, &cfg).unwrap();
    let elapsed = start.elapsed();
    let per_stage: Vec<String> = outcome.validations.last().unwrap().stages.iter().map(|s| format!("{:.2}", s.report.psnr)).collect();
    let trajectory: Vec<String> = outcome.validations.iter().map(|v| format!("{}:{:.2}", v.iter, v.final_psnr())).collect();
    writeln!(
        std::io::stderr(),
        "  run {label}: input {:.2} dB, per-stage [{}] dB, final stage by iter [{}], loss {:.4} -> {:.4}, {:.0}s",
        outcome.input_psnr,
        per_stage.join(", "),
        trajectory.join(" "),
        outcome.first_loss,
        outcome.last_loss,
        elapsed.as_secs_f64()
    )
    .unwrap();
    Run { label, model, outcome, elapsed }
}

struct Runs {
    full: Run,
    sam_only: Run,
    csff_only: Run,
    plain: Run,
    single: Run,
}

fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| Runs {
        full: run("SAM+CSFF", &[]),
        sam_only: run("SAM only", &["use_csff=false"]),
        csff_only: run("CSFF only", &["use_sam=false"]),
        plain: run("neither", &["use_sam=false", "use_csff=false"]),
        single: run("1-stage", &["n_stages=1"]),
    })
}

#[test]
fn criterion_06_toy_denoising_gain() {
    let _g = serial();
    let full = &runs().full;
    let gain = full.final_psnr() - full.outcome.input_psnr;
    let pass = gain >= 3.0 && full.elapsed <= RUN_BUDGET;
    report(
        6,
        pass,
        &format!(
            "stage-3 {:.2} dB vs noisy input {:.2} dB, gain {gain:.2} dB (need >= 3), {TOY_ITERS} iters in {:.0}s",
            full.final_psnr(),
            full.outcome.input_psnr,
            full.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_07_architecture_trends() {
    let _g = serial();
    let r = runs();
    let mut err = std::io::stderr();
    writeln!(err, "  3-stage grid, final PSNR (dB) after {TOY_ITERS} iters:").unwrap();
    writeln!(err, "               CSFF on   CSFF off").unwrap();
    writeln!(err, "    SAM on     {:>7.2}   {:>7.2}", r.full.final_psnr(), r.sam_only.final_psnr()).unwrap();
    writeln!(err, "    SAM off    {:>7.2}   {:>7.2}", r.csff_only.final_psnr(), r.plain.final_psnr()).unwrap();
    writeln!(err, "  {}: {:.2} dB", r.single.label, r.single.final_psnr()).unwrap();
    for x in [&r.full, &r.sam_only, &r.csff_only, &r.plain, &r.single] {
        assert!(x.elapsed <= RUN_BUDGET, "{} took {:?}", x.label, x.elapsed);
    }
    let stages_ok = r.full.final_psnr() >= r.single.final_psnr();
    let modules_ok = r.full.final_psnr() >= r.plain.final_psnr() - 0.1;
    report(
        7,
        stages_ok && modules_ok,
        &format!(
            "3-stage {:.2} >= 1-stage {:.2}: {stages_ok}; SAM+CSFF {:.2} >= neither {:.2} - 0.1: {modules_ok}",
            r.full.final_psnr(),
            r.single.final_psnr(),
            r.full.final_psnr(),
            r.plain.final_psnr()
        ),
    );
}

#[test]
fn criterion_08_progressive_refinement() {
    let _g = serial();
    let full = &runs().full;
    let p: Vec<f64> = full.outcome.validations.last().unwrap().stages.iter().map(|s| s.report.psnr).collect();
    let ordered = p.len() == 3 && p[2] >= p[1] - 0.2 && p[1] >= p[0] - 0.2;
    let img = unit_t([1, 3, 64, 64], 90).cast::<f32>();
    let (_, ops1) = full.model.early_exit_counted(&img, 1).unwrap();
    let (_, ops3) = full.model.early_exit_counted(&img, 3).unwrap();
    let pass = ordered && ops1 < ops3;
    report(
        8,
        pass,
        &format!("validation PSNR X1 {:.2}, X2 {:.2}, X3 {:.2} (0.2 dB slack); ops exit 1 {ops1} < full {ops3}", p[0], p[1], p[2]),
    );
}

// ---------------------------------------------------------------------------
// 9. Metric unit tests

#[test]
fn criterion_09_metrics() {
    let _g = serial();
    let shape = Shape::new(1, 3, 16, 16).unwrap();
    let p = psnr(&Tensor::<f64>::zeros(shape), &Tensor::full(shape, 0.1), 1.0).unwrap();
    let x = unit_t([1, 1, 16, 16], 95);
    let s = ssim(&x, &x).unwrap();
    let green = rgb_to_y(&Tensor::<f64>::from_vec([1, 3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap()).unwrap().data()[0];
    let mut r = rng(96);
    let mut bound_ok = true;
    for _ in 0..1000 {
        let (a, b) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let (ta, tb) = (Tensor::<f64>::scalar(a), Tensor::<f64>::scalar(b));
        bound_ok &= charbonnier_value(&ta, &tb, 1e-3).unwrap() >= 1e-3;
    }
    let pass = p == 20.0 && s == 1.0 && green == 0.587 && bound_ok;
    report(9, pass, &format!("PSNR(0.1 error) {p}, SSIM(x,x) {s}, Y(0,1,0) {green}, Charbonnier >= eps on 1000 pairs {bound_ok}"));
}

// ---------------------------------------------------------------------------
// 10. Determinism

#[test]
fn criterion_10_determinism() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    // Both runs write to the same paths, since the paths are part of the
    // configuration stored in the checkpoint.
    let ckpt = dir.path().join("toy.ckpt");
    let log = dir.path().join("toy.log");
    let once = || {
        let ckpt_arg = format!("checkpoint_path={}", ckpt.display());
        let log_arg = format!("log_path={}", log.display());
        let mut cfg = toy_config(&[&ckpt_arg, &log_arg]);
        cfg.apply_overrides(&["iters=60", "val_every=20"]).unwrap();
        let mut model = MprNet::<f32>::new(cfg.model.clone(), cfg.train.seed).unwrap();
        let out = train(&mut model, &cfg).unwrap();
        (out.checksum, std::fs::read(&ckpt).unwrap(), std::fs::read(&log).unwrap())
    };
    let (c1, k1, l1) = once();
    let (c2, k2, l2) = once();
    let (_, cfg_a) = checkpoint::load::<f32>(&ckpt).unwrap();
    let pass = c1 == c2 && k1 == k2 && l1 == l2 && cfg_a.train.iters == 60;
    report(
        10,
        pass,
        &format!("log checksums {c1:016x} / {c2:016x}, checkpoints identical {} ({} bytes), logs identical {}", k1 == k2, k1.len(), l1 == l2),
    );
}
