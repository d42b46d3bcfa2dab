use rand::Rng;

use super::{check_channels, Act, ActKind, Conv};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::Real;

/// Channel attention block.
///
/// ```text
/// f = conv2(act(conv1(x)))
/// w = sigmoid(attn_up(act(attn_down(gap(f)))))
/// y = x + f ⊙ w
/// ```
#[derive(Clone, Debug)]
pub struct Cab {
    conv1: Conv,
    act_body: Act,
    conv2: Conv,
    attn_down: Conv,
    act_attn: Act,
    attn_up: Conv,
    channels: usize,
}

impl Cab {
    pub fn new<T: Real, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        channels: usize,
        reduction: usize,
        act: ActKind,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!("CAB width {channels} is not divisible by reduction {reduction}")));
        }
        let squeezed = channels / reduction;
        Ok(Self {
            conv1: Conv::new(b, "conv1", channels, channels, 3)?,
            act_body: Act::new(b, "act1", act)?,
            conv2: Conv::new(b, "conv2", channels, channels, 3)?,
            attn_down: Conv::new(b, "attn_down", channels, squeezed, 1)?,
            act_attn: Act::new(b, "act2", act)?,
            attn_up: Conv::new(b, "attn_up", squeezed, channels, 1)?,
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        check_channels(g, x, self.channels, "CAB")?;
        let f = self.conv1.forward(g, ps, x)?;
        let f = self.act_body.forward(g, ps, f)?;
        let f = self.conv2.forward(g, ps, f)?;
        let w = g.global_avg_pool(f)?;
        let w = self.attn_down.forward(g, ps, w)?;
        let w = self.act_attn.forward(g, ps, w)?;
        let w = self.attn_up.forward(g, ps, w)?;
        let w = g.sigmoid(w)?;
        let fw = g.mul_channel(f, w)?;
        g.add(x, fw)
    }
}

/// Runs a stack of CABs in order.
pub(crate) fn run_stack<T: Real>(cabs: &[Cab], g: &mut Graph<T>, ps: &ParamStore<T>, mut x: Var) -> Result<Var> {
    for cab in cabs {
        x = cab.forward(g, ps, x)?;
    }
    Ok(x)
}

/// Builds `count` CABs named `cab0..`.
pub(crate) fn build_stack<T: Real, R: Rng>(
    b: &mut ParamBuilder<'_, T, R>,
    count: usize,
    channels: usize,
    reduction: usize,
    act: ActKind,
) -> Result<Vec<Cab>> {
    (0..count).map(|i| Cab::new(&mut b.scope(&format!("cab{i}")), channels, reduction, act)).collect()
}
