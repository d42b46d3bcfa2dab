//! Central finite-difference checking of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::{usage_err, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled per parameter; smaller tensors are checked fully.
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, samples_per_param: 12, seed: 0 }
    }
}

/// The coordinate with the largest disagreement.
#[derive(Clone, Debug)]
pub struct WorstCoord {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|a - fd| / max(|a|, |fd|, 1e-8)`.
    pub max_rel_error: f64,
    pub worst: Option<WorstCoord>,
    pub checked: usize,
}

fn eval<F>(params: &ParamStore<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = f(&mut g, params)?;
    let v = g.value(root);
    if !v.shape().is_scalar() {
        return Err(usage_err!("grad_check function must return a scalar, got {}", v.shape()));
    }
    Ok(v.data()[0])
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences for every parameter in `params`.
///
/// `f` is called once for the analytic pass and twice per checked coordinate.
/// Parameter values are restored afterwards and gradients are cleared.
pub fn grad_check<F>(params: &mut ParamStore<f64>, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    params.zero_grads();
    let mut g = Graph::new();
    let root = f(&mut g, params)?;
    g.backward(root, params)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.numel()]))
        .collect();
    params.zero_grads();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    for id in ids {
        let numel = params.tensor(id).numel();
        let coords: Vec<usize> = if numel <= cfg.samples_per_param {
            (0..numel).collect()
        } else {
            let mut c = sample(&mut rng, numel, cfg.samples_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let orig = params.tensor(id).data()[idx];
            params.get_mut(id).tensor.data_mut()[idx] = orig + cfg.step;
            let plus = eval(params, &f);
            params.get_mut(id).tensor.data_mut()[idx] = orig - cfg.step;
            let minus = eval(params, &f);
            params.get_mut(id).tensor.data_mut()[idx] = orig;
            let fd = (plus? - minus?) / (2.0 * cfg.step);
            let a = analytic[id.index()][idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst =
                    Some(WorstCoord { param: params.get(id).name.clone(), index: idx, analytic: a, numeric: fd });
            }
        }
    }
    Ok(report)
}
