use rand::Rng;

use super::Conv;
use crate::autograd::{Graph, Var};
use crate::error::{usage_err, Result};
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::Real;

/// Cross-stage feature fusion: a pair of 1×1 convs per scale that map the
/// previous stage's encoder and decoder features into the next stage.
#[derive(Clone, Debug)]
pub struct Csff {
    enc: Vec<Conv>,
    dec: Vec<Conv>,
}

impl Csff {
    /// One projection pair per scale, from `in_widths[s]` to `out_widths[s]` channels.
    pub fn new<T: Real, R: Rng>(b: &mut ParamBuilder<'_, T, R>, in_widths: &[usize], out_widths: &[usize]) -> Result<Self> {
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        for (s, (&i, &o)) in in_widths.iter().zip(out_widths).enumerate() {
            enc.push(Conv::new(b, &format!("enc{s}"), i, o, 1)?);
            dec.push(Conv::new(b, &format!("dec{s}"), i, o, 1)?);
        }
        Ok(Self { enc, dec })
    }

    pub fn n_scales(&self) -> usize {
        self.enc.len()
    }

    /// `conv1x1(enc_feat) + conv1x1(dec_feat)` at `scale`.
    pub fn project<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        enc_feat: Var,
        dec_feat: Var,
        scale: usize,
    ) -> Result<Var> {
        if scale >= self.n_scales() {
            return Err(usage_err!("CSFF scale {scale} out of range (have {})", self.n_scales()));
        }
        let e = self.enc[scale].forward(g, ps, enc_feat)?;
        let d = self.dec[scale].forward(g, ps, dec_feat)?;
        g.add(e, d)
    }
}
