//! Building blocks of the restoration network.
//!
//! Every block owns only [`ParamId`]s; values live in a [`ParamStore`] and
//! forward passes record onto a caller-supplied [`Graph`].

mod cab;
mod csff;
mod encdec;
mod orsnet;
mod sam;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use cab::Cab;
pub use csff::Csff;
pub use encdec::{EncDecOutput, EncoderDecoder};
pub use orsnet::{Orb, OrsNet};
pub use sam::{Sam, SamOutput};

use crate::autograd::{Activation, Graph, Var};
use crate::error::{dim_err, Error, Result};
use crate::params::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::Real;

/// Nonlinearity used inside attention blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ActKind {
    Relu,
    #[default]
    Prelu,
}

impl fmt::Display for ActKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActKind::Relu => "relu",
            ActKind::Prelu => "prelu",
        })
    }
}

impl FromStr for ActKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActKind::Relu),
            "prelu" => Ok(ActKind::Prelu),
            other => Err(Error::Config(format!("unknown activation `{other}` (expected relu or prelu)"))),
        }
    }
}

/// Square convolution with bias and `kernel / 2` zero padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new<T: Real, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
    ) -> Result<Self> {
        let mut s = b.scope(name);
        let weight = s.conv_weight("weight", out_c, in_c, kernel)?;
        let bias = s.bias("bias", out_c)?;
        Ok(Self { weight, bias, in_c, out_c, kernel })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        g.conv2d(x, w, Some(b), 1, self.kernel / 2)
    }
}

/// One activation site; PReLU sites own a learnable slope.
#[derive(Clone, Debug)]
pub struct Act {
    slope: Option<ParamId>,
}

impl Act {
    pub fn new<T: Real, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, kind: ActKind) -> Result<Self> {
        let slope = match kind {
            ActKind::Relu => None,
            ActKind::Prelu => Some(b.prelu_slope(name)?),
        };
        Ok(Self { slope })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        match self.slope {
            Some(id) => {
                let a = g.param(ps, id);
                g.activation(x, Activation::Prelu(a))
            }
            None => g.activation(x, Activation::Relu),
        }
    }
}

pub(crate) fn check_channels<T: Real>(g: &Graph<T>, x: Var, expected: usize, block: &str) -> Result<()> {
    let s = g.shape(x);
    if s.c != expected {
        return Err(dim_err!("{block}: expected {expected} channels, got input {s}"));
    }
    Ok(())
}
