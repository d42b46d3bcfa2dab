use rand::Rng;

use super::{check_channels, Conv};
use crate::autograd::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::Real;

/// Supervised attention module bridging two stages.
#[derive(Clone, Debug)]
pub struct Sam {
    conv_res: Conv,
    conv_feat: Conv,
    conv_mask: Conv,
    channels: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SamOutput {
    /// Attention-gated features handed to the next stage.
    pub f_out: Var,
    /// Restored image `img + r_s`.
    pub x_s: Var,
    pub r_s: Var,
    /// Per-pixel, per-channel mask in `(0, 1)`.
    pub mask: Var,
}

impl Sam {
    pub fn new<T: Real, R: Rng>(b: &mut ParamBuilder<'_, T, R>, channels: usize) -> Result<Self> {
        Ok(Self {
            conv_res: Conv::new(b, "conv_res", channels, 3, 1)?,
            conv_feat: Conv::new(b, "conv_feat", channels, channels, 1)?,
            conv_mask: Conv::new(b, "conv_mask", 3, channels, 1)?,
            channels,
        })
    }

    /// ```text
    /// r_s   = conv_res(f_in)
    /// x_s   = img + r_s
    /// m     = sigmoid(conv_mask(x_s))
    /// f_out = f_in + m ⊙ conv_feat(f_in)
    /// ```
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, f_in: Var, img: Var) -> Result<SamOutput> {
        check_channels(g, f_in, self.channels, "SAM features")?;
        check_channels(g, img, 3, "SAM image")?;
        let (sf, si) = (g.shape(f_in), g.shape(img));
        if (sf.n, sf.h, sf.w) != (si.n, si.h, si.w) {
            return Err(dim_err!("SAM: features {sf} and image {si} disagree spatially"));
        }
        let r_s = self.conv_res.forward(g, ps, f_in)?;
        let x_s = g.add(img, r_s)?;
        let m = self.conv_mask.forward(g, ps, x_s)?;
        let mask = g.sigmoid(m)?;
        let feat = self.conv_feat.forward(g, ps, f_in)?;
        let gated = g.mul(mask, feat)?;
        let f_out = g.add(f_in, gated)?;
        Ok(SamOutput { f_out, x_s, r_s, mask })
    }
}
