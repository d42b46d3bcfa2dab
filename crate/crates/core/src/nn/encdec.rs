use rand::Rng;

use super::cab::{build_stack, run_stack};
use super::{check_channels, ActKind, Cab, Conv};
use crate::autograd::{Graph, Var};
use crate::error::{dim_err, Error, Result};
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::Real;

/// U-Net style encoder-decoder with CABs at every scale.
///
/// Scale `s` runs at `1 / 2^s` resolution with `base_width * 2^s` channels.
/// Downsampling is 2×2 max pooling followed by a 1×1 width-changing conv;
/// upsampling is bilinear ×2 followed by a 1×1 conv. Skip features pass
/// through one CAB and are added into the decoder after upsampling.
#[derive(Clone, Debug)]
pub struct EncoderDecoder {
    widths: Vec<usize>,
    encoders: Vec<Vec<Cab>>,
    downs: Vec<Conv>,
    skips: Vec<Cab>,
    ups: Vec<Conv>,
    decoders: Vec<Vec<Cab>>,
}

/// Full-resolution output plus every per-scale feature, finest first.
#[derive(Clone, Debug)]
pub struct EncDecOutput {
    pub features: Var,
    pub enc_feats: Vec<Var>,
    pub dec_feats: Vec<Var>,
}

impl EncoderDecoder {
    pub fn new<T: Real, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        base_width: usize,
        n_scales: usize,
        n_cabs_per_scale: usize,
        reduction: usize,
        act: ActKind,
    ) -> Result<Self> {
        if n_scales == 0 {
            return Err(Error::Config("encoder-decoder needs at least one scale".into()));
        }
        let widths: Vec<usize> = (0..n_scales).map(|s| base_width << s).collect();
        let mut encoders = Vec::new();
        let mut decoders = Vec::new();
        let mut downs = Vec::new();
        let mut ups = Vec::new();
        let mut skips = Vec::new();
        for (s, &w) in widths.iter().enumerate() {
            encoders.push(build_stack(&mut b.scope(&format!("enc{s}")), n_cabs_per_scale, w, reduction, act)?);
            decoders.push(build_stack(&mut b.scope(&format!("dec{s}")), n_cabs_per_scale, w, reduction, act)?);
            if s + 1 < n_scales {
                downs.push(Conv::new(b, &format!("down{s}"), w, widths[s + 1], 1)?);
                ups.push(Conv::new(b, &format!("up{s}"), widths[s + 1], w, 1)?);
                skips.push(Cab::new(&mut b.scope(&format!("skip{s}")), w, reduction, act)?);
            }
        }
        Ok(Self { widths, encoders, downs, skips, ups, decoders })
    }

    /// Channel width at each scale, finest first.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_scales(&self) -> usize {
        self.widths.len()
    }

    /// `injections[s]`, when given, is added to the encoder output at scale `s`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Var,
        injections: Option<&[Var]>,
    ) -> Result<EncDecOutput> {
        check_channels(g, x, self.widths[0], "encoder-decoder")?;
        let s = g.shape(x);
        let div = 1usize << (self.n_scales() - 1);
        if s.h % div != 0 || s.w % div != 0 {
            return Err(dim_err!("encoder-decoder with {} scales needs h, w divisible by {div}, got {s}", self.n_scales()));
        }
        if let Some(inj) = injections {
            if inj.len() != self.n_scales() {
                return Err(dim_err!("expected {} encoder injections, got {}", self.n_scales(), inj.len()));
            }
        }

        let mut enc_feats = Vec::with_capacity(self.n_scales());
        let mut h = x;
        for scale in 0..self.n_scales() {
            if scale > 0 {
                h = g.max_pool2(h)?;
                h = self.downs[scale - 1].forward(g, ps, h)?;
            }
            h = run_stack(&self.encoders[scale], g, ps, h)?;
            if let Some(inj) = injections {
                h = g.add(h, inj[scale])?;
            }
            enc_feats.push(h);
        }

        let last = self.n_scales() - 1;
        let mut dec_feats = vec![enc_feats[last]; self.n_scales()];
        let mut d = run_stack(&self.decoders[last], g, ps, enc_feats[last])?;
        dec_feats[last] = d;
        for scale in (0..last).rev() {
            d = g.upsample_bilinear2(d)?;
            d = self.ups[scale].forward(g, ps, d)?;
            let skip = self.skips[scale].forward(g, ps, enc_feats[scale])?;
            d = g.add(d, skip)?;
            d = run_stack(&self.decoders[scale], g, ps, d)?;
            dec_feats[scale] = d;
        }
        Ok(EncDecOutput { features: dec_feats[0], enc_feats, dec_feats })
    }
}
