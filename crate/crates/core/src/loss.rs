//! Training objective: Charbonnier plus Laplacian edge loss, summed over stages.

use crate::autograd::{Graph, Var};
use crate::error::{usage_err, Error, Result};
use crate::model::StageOutput;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub epsilon: f64,
    /// Weight of the edge term.
    pub lambda_edge: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { epsilon: 1e-3, lambda_edge: 0.05 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.lambda_edge >= 0.0) {
            return Err(Error::Config(format!(
                "loss needs epsilon > 0 and lambda_edge >= 0, got {} and {}",
                self.epsilon, self.lambda_edge
            )));
        }
        Ok(())
    }
}

/// Per-pixel Charbonnier penalty averaged over all elements.
pub fn charbonnier<T: Real>(g: &mut Graph<T>, x: Var, y: Var, epsilon: f64) -> Result<Var> {
    g.charbonnier(x, y, epsilon)
}

/// Charbonnier distance between the Laplacians of `x` and `y`.
pub fn edge_loss<T: Real>(g: &mut Graph<T>, x: Var, y: Var, epsilon: f64) -> Result<Var> {
    if g.shape(x) != g.shape(y) {
        return Err(crate::error::dim_err!("edge_loss: shape mismatch {} vs {}", g.shape(x), g.shape(y)));
    }
    let lx = g.laplacian(x)?;
    let ly = g.laplacian(y)?;
    g.charbonnier(lx, ly, epsilon)
}

/// Graph handles of the objective and its per-stage terms.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub charbonnier: Vec<Var>,
    pub edge: Vec<Var>,
    pub supervised: Vec<bool>,
}

impl LossTerms {
    pub fn report<T: Real>(&self, g: &Graph<T>) -> LossReport {
        let scalar = |v: Var| g.value(v).data()[0].as_f64();
        LossReport {
            charbonnier: self.charbonnier.iter().map(|&v| scalar(v)).collect(),
            edge: self.edge.iter().map(|&v| scalar(v)).collect(),
            supervised: self.supervised.clone(),
            total: scalar(self.total),
        }
    }
}

/// Numeric values of a [`LossTerms`].
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub charbonnier: Vec<f64>,
    pub edge: Vec<f64>,
    pub supervised: Vec<bool>,
    pub total: f64,
}

/// `Σ_S [charbonnier(X_S, Y) + λ · edge(X_S, Y)]` over supervised stages.
///
/// Terms of unsupervised stages are still computed for reporting but do not
/// enter `total`.
pub fn total_loss<T: Real>(g: &mut Graph<T>, outputs: &[StageOutput], target: Var, cfg: &LossConfig) -> Result<LossTerms> {
    if outputs.is_empty() {
        return Err(usage_err!("total_loss needs at least one stage output"));
    }
    cfg.validate()?;
    let mut terms = LossTerms { total: target, charbonnier: Vec::new(), edge: Vec::new(), supervised: Vec::new() };
    let mut total: Option<Var> = None;
    for out in outputs {
        let c = charbonnier(g, out.x_s, target, cfg.epsilon)?;
        let e = edge_loss(g, out.x_s, target, cfg.epsilon)?;
        terms.charbonnier.push(c);
        terms.edge.push(e);
        terms.supervised.push(out.supervised);
        if out.supervised {
            let weighted = g.scale(e, cfg.lambda_edge)?;
            let stage = g.add(c, weighted)?;
            total = Some(match total {
                Some(t) => g.add(t, stage)?,
                None => stage,
            });
        }
    }
    terms.total = total.ok_or_else(|| usage_err!("no supervised stage output"))?;
    Ok(terms)
}

/// Tensor-level Charbonnier value.
pub fn charbonnier_value<T: Real>(x: &Tensor<T>, y: &Tensor<T>, epsilon: f64) -> Result<f64> {
    let mut g = Graph::inference();
    let (a, b) = (g.input(x.detached()), g.input(y.detached()));
    let v = charbonnier(&mut g, a, b, epsilon)?;
    Ok(g.value(v).data()[0].as_f64())
}

/// Tensor-level edge loss value.
pub fn edge_loss_value<T: Real>(x: &Tensor<T>, y: &Tensor<T>, epsilon: f64) -> Result<f64> {
    let mut g = Graph::inference();
    let (a, b) = (g.input(x.detached()), g.input(y.detached()));
    let v = edge_loss(&mut g, a, b, epsilon)?;
    Ok(g.value(v).data()[0].as_f64())
}

/// Tensor-level Laplacian.
pub fn laplacian<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::inference();
    let a = g.input(x.detached());
    let l = g.laplacian(a)?;
    Ok(g.value(l).detached())
}

/// Builds the graph, evaluates the objective and runs backward in one go.
pub fn loss_and_backward<T: Real>(
    g: &mut Graph<T>,
    outputs: &[StageOutput],
    target: Var,
    cfg: &LossConfig,
    params: &mut ParamStore<T>,
) -> Result<LossReport> {
    let terms = total_loss(g, outputs, target, cfg)?;
    g.backward(terms.total, params)?;
    Ok(terms.report(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn identical_inputs_give_epsilon_exactly() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 3, 5, 4).unwrap(), |_, c, h, w| (c + h * w) as f64 * 0.1);
        assert_eq!(charbonnier_value(&x, &x, 1e-3).unwrap(), 1e-3);
        assert_eq!(edge_loss_value(&x, &x, 1e-3).unwrap(), 1e-3);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4).unwrap());
        let y = Tensor::<f64>::zeros(Shape::new(1, 3, 4, 2).unwrap());
        assert!(matches!(charbonnier_value(&x, &y, 1e-3), Err(Error::Dimension(_))));
        assert!(matches!(edge_loss_value(&x, &y, 1e-3), Err(Error::Dimension(_))));
    }

    #[test]
    fn empty_outputs_are_a_usage_error() {
        let mut g = Graph::<f64>::new();
        let y = g.input(Tensor::zeros(Shape::new(1, 3, 2, 2).unwrap()));
        assert!(matches!(total_loss(&mut g, &[], y, &LossConfig::default()), Err(Error::Usage(_))));
    }
}
