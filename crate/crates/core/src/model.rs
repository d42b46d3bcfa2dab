//! The three-stage progressive restoration network.
//!
//! Stage 1 sees the input as four quadrants, stage 2 as top and bottom
//! halves, stage 3 as the whole image. Patches of a stage share weights and
//! are processed as one batch (`patch-major`, so patch `i` of sample `b`
//! sits at batch index `i * n + b`); their features are stitched back to
//! full resolution before each bridge. Each stage predicts a residual `R_S`
//! and reports `X_S = I + R_S`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{dim_err, usage_err, Error, Result};
use crate::nn::{ActKind, Conv, Csff, EncoderDecoder, OrsNet, Sam};
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::{Real, Shape, Tensor};

/// Numeric precision the model runs in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "single" => Ok(Precision::F32),
            "f64" | "double" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}` (expected f32 or f64)"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channel width at full resolution; doubles per encoder scale.
    pub base_width: usize,
    pub n_scales: usize,
    pub n_cabs_per_scale: usize,
    pub n_orbs: usize,
    pub n_cabs_per_orb: usize,
    pub cab_reduction: usize,
    /// 1, 2 or 3.
    pub n_stages: usize,
    pub use_sam: bool,
    pub use_csff: bool,
    pub activation: ActKind,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_width: 16,
            n_scales: 3,
            n_cabs_per_scale: 2,
            n_orbs: 3,
            n_cabs_per_orb: 8,
            cab_reduction: 4,
            n_stages: 3,
            use_sam: true,
            use_csff: true,
            activation: ActKind::Prelu,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=3).contains(&self.n_stages) {
            return bad(format!("n_stages must be 1, 2 or 3, got {}", self.n_stages));
        }
        if self.base_width == 0 || self.n_scales == 0 || self.n_cabs_per_scale == 0 {
            return bad("base_width, n_scales and n_cabs_per_scale must be positive".into());
        }
        if self.n_scales > 8 {
            return bad(format!("n_scales {} is unreasonably deep", self.n_scales));
        }
        if self.n_stages == 3 && (self.n_orbs == 0 || self.n_cabs_per_orb == 0) {
            return bad("n_orbs and n_cabs_per_orb must be positive for a 3-stage model".into());
        }
        if self.cab_reduction == 0 || self.base_width % self.cab_reduction != 0 {
            return bad(format!("base_width {} is not divisible by cab_reduction {}", self.base_width, self.cab_reduction));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn required_multiple(&self) -> usize {
        // Stage-1 quadrants are half size and must survive n_scales - 1 poolings.
        1 << self.n_scales
    }

    /// Channel width at each encoder scale.
    pub fn widths(&self) -> Vec<usize> {
        (0..self.n_scales).map(|s| self.base_width << s).collect()
    }
}

/// How a stage splits its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchLayout {
    /// Top-left, top-right, bottom-left, bottom-right.
    Quadrants,
    /// Top, bottom.
    Halves,
    Whole,
}

impl PatchLayout {
    pub fn for_stage(stage: usize) -> Result<Self> {
        match stage {
            1 => Ok(Self::Quadrants),
            2 => Ok(Self::Halves),
            3 => Ok(Self::Whole),
            _ => Err(usage_err!("stage must be 1, 2 or 3, got {stage}")),
        }
    }

    pub fn count(self) -> usize {
        match self {
            Self::Quadrants => 4,
            Self::Halves => 2,
            Self::Whole => 1,
        }
    }

    /// Patch grid as (rows, cols).
    fn grid(self) -> (usize, usize) {
        match self {
            Self::Quadrants => (2, 2),
            Self::Halves => (2, 1),
            Self::Whole => (1, 1),
        }
    }
}

fn crop<T: Real>(img: &Tensor<T>, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = img.shape();
    let shape = Shape::new(s.n, s.c, h, w)?;
    Ok(Tensor::from_fn(shape, |n, c, y, x| img.get(n, c, y0 + y, x0 + x)))
}

/// Splits an image into the stage's non-overlapping patches (row-major order).
pub fn split_patches<T: Real>(img: &Tensor<T>, stage: usize) -> Result<Vec<Tensor<T>>> {
    let layout = PatchLayout::for_stage(stage)?;
    let (rows, cols) = layout.grid();
    let s = img.shape();
    if s.h % rows != 0 || s.w % cols != 0 {
        return Err(dim_err!("stage {stage} split needs h divisible by {rows} and w by {cols}, got {s}"));
    }
    let (ph, pw) = (s.h / rows, s.w / cols);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(crop(img, r * ph, c * pw, ph, pw)?);
        }
    }
    Ok(out)
}

/// Inverse of [`split_patches`].
pub fn merge_patches<T: Real>(patches: &[Tensor<T>], stage: usize) -> Result<Tensor<T>> {
    let layout = PatchLayout::for_stage(stage)?;
    let (rows, cols) = layout.grid();
    if patches.len() != rows * cols {
        return Err(dim_err!("stage {stage} merge needs {} patches, got {}", rows * cols, patches.len()));
    }
    let ps = patches[0].shape();
    if let Some(p) = patches.iter().find(|p| p.shape() != ps) {
        return Err(dim_err!("inconsistent patch shapes {} and {ps}", p.shape()));
    }
    let shape = Shape::new(ps.n, ps.c, ps.h * rows, ps.w * cols)?;
    Ok(Tensor::from_fn(shape, |n, c, y, x| patches[(y / ps.h) * cols + x / ps.w].get(n, c, y % ps.h, x % ps.w)))
}

/// Splits `x` per `layout` and stacks the patches along the batch axis.
pub fn patches_to_batch<T: Real>(g: &mut Graph<T>, x: Var, layout: PatchLayout) -> Result<Var> {
    let s = g.shape(x);
    let (rows, cols) = layout.grid();
    if s.h % rows != 0 || s.w % cols != 0 {
        return Err(dim_err!("cannot split {s} into a {rows}×{cols} patch grid"));
    }
    if layout == PatchLayout::Whole {
        return Ok(x);
    }
    let (ph, pw) = (s.h / rows, s.w / cols);
    let mut pieces = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let band = g.narrow(x, 2, r * ph, ph)?;
        for c in 0..cols {
            pieces.push(if cols == 1 { band } else { g.narrow(band, 3, c * pw, pw)? });
        }
    }
    g.concat(&pieces, 0)
}

/// Inverse of [`patches_to_batch`] for a batch of `n` original samples.
pub fn batch_to_patches<T: Real>(g: &mut Graph<T>, x: Var, layout: PatchLayout, n: usize) -> Result<Var> {
    if layout == PatchLayout::Whole {
        return Ok(x);
    }
    let (rows, cols) = layout.grid();
    let s = g.shape(x);
    if s.n != n * rows * cols {
        return Err(dim_err!("batch of {} does not hold {} patches of {n} samples", s.n, rows * cols));
    }
    let mut bands = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut row = Vec::with_capacity(cols);
        for c in 0..cols {
            row.push(g.narrow(x, 0, (r * cols + c) * n, n)?);
        }
        bands.push(if cols == 1 { row[0] } else { g.concat(&row, 3)? });
    }
    g.concat(&bands, 2)
}

/// Output of one stage.
#[derive(Clone, Copy, Debug)]
pub struct StageOutput {
    /// Restored image `I + R_S`.
    pub x_s: Var,
    pub r_s: Var,
    /// Features carried into the next stage; absent for the ORSNet stage.
    pub f_out: Option<Var>,
    /// Whether this output enters the training objective.
    pub supervised: bool,
}

/// How an encoder-decoder stage produces its image and outgoing features.
#[derive(Clone, Debug)]
pub enum Bridge {
    Sam(Sam),
    /// Plain pass-through of features plus a 1×1 image head.
    Head(Conv),
}

/// An encoder-decoder stage (stages 1 and 2).
#[derive(Clone, Debug)]
pub struct UnetStage {
    pub stem: Conv,
    pub encdec: EncoderDecoder,
    pub bridge: Bridge,
    /// Projections of the previous stage's features into this encoder.
    pub csff_in: Option<Csff>,
    pub layout: PatchLayout,
}

/// The full-resolution stage (stage 3).
#[derive(Clone, Debug)]
pub struct OrsStage {
    pub stem: Conv,
    pub orsnet: OrsNet,
    pub csff_in: Option<Csff>,
    pub tail: Conv,
}

/// Stitched full-resolution features passed between stages.
struct Carry {
    f_out: Var,
    enc: Vec<Var>,
    dec: Vec<Var>,
}

/// The assembled network and its parameters.
#[derive(Clone, Debug)]
pub struct MprNet<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    stage1: UnetStage,
    stage2: Option<UnetStage>,
    stage3: Option<OrsStage>,
}

impl<T: Real> MprNet<T> {
    /// Builds the network with seeded fan-in uniform weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut b = ParamBuilder::new(&mut params, &mut rng);
        let widths = config.widths();
        let c = config.base_width;

        let unet = |b: &mut ParamBuilder<'_, T, ChaCha8Rng>, idx: usize| -> Result<UnetStage> {
            let mut sb = b.scope(&format!("stage{idx}"));
            let stem = Conv::new(&mut sb, "stem", 3, c, 3)?;
            let encdec = EncoderDecoder::new(
                &mut sb.scope("encdec"),
                c,
                config.n_scales,
                config.n_cabs_per_scale,
                config.cab_reduction,
                config.activation,
            )?;
            let csff_in = if idx > 1 && config.use_csff {
                Some(Csff::new(&mut sb.scope("csff"), &widths, &widths)?)
            } else {
                None
            };
            let bridge = if config.use_sam {
                Bridge::Sam(Sam::new(&mut sb.scope("sam"), c)?)
            } else {
                Bridge::Head(Conv::new(&mut sb, "head", c, 3, 1)?)
            };
            Ok(UnetStage { stem, encdec, bridge, csff_in, layout: PatchLayout::for_stage(idx)? })
        };

        let stage1 = unet(&mut b, 1)?;
        let stage2 = if config.n_stages >= 2 { Some(unet(&mut b, 2)?) } else { None };
        let stage3 = if config.n_stages >= 3 {
            let mut sb = b.scope("stage3");
            let stem = Conv::new(&mut sb, "stem", 3, c, 3)?;
            let orsnet = OrsNet::new(
                &mut sb.scope("orsnet"),
                c,
                config.n_orbs,
                config.n_cabs_per_orb,
                config.cab_reduction,
                config.activation,
            )?;
            let n_inj = config.n_orbs.min(config.n_scales);
            let csff_in = if config.use_csff {
                Some(Csff::new(&mut sb.scope("csff"), &widths[..n_inj], &vec![c; n_inj])?)
            } else {
                None
            };
            let tail = Conv::new(&mut sb, "tail", c, 3, 3)?;
            Some(OrsStage { stem, orsnet, csff_in, tail })
        } else {
            None
        };
        Ok(Self { config, params, stage1, stage2, stage3 })
    }

    /// The same architecture with every parameter set to zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.fill_zero();
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn stage1(&self) -> &UnetStage {
        &self.stage1
    }

    pub fn stage2(&self) -> Option<&UnetStage> {
        self.stage2.as_ref()
    }

    pub fn stage3(&self) -> Option<&OrsStage> {
        self.stage3.as_ref()
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Real>(&self) -> MprNet<U> {
        MprNet {
            config: self.config.clone(),
            params: self.params.cast(),
            stage1: self.stage1.clone(),
            stage2: self.stage2.clone(),
            stage3: self.stage3.clone(),
        }
    }

    pub fn check_input(&self, s: Shape) -> Result<()> {
        let m = self.config.required_multiple();
        if s.c != 3 {
            return Err(dim_err!("model input must have 3 channels, got {s}"));
        }
        if s.h % m != 0 || s.w % m != 0 {
            return Err(dim_err!("model input height and width must be multiples of {m}, got {s}"));
        }
        Ok(())
    }

    /// Runs every stage.
    pub fn forward(&self, g: &mut Graph<T>, img: Var) -> Result<Vec<StageOutput>> {
        self.forward_until(g, img, self.config.n_stages)
    }

    /// Runs stages `1..=exit_stage` only.
    pub fn forward_until(&self, g: &mut Graph<T>, img: Var, exit_stage: usize) -> Result<Vec<StageOutput>> {
        self.forward_with(g, &self.params, img, exit_stage)
    }

    /// [`MprNet::forward_until`] reading weights from `ps`, which must have
    /// this model's layout (for example a perturbed copy of [`MprNet::params`]).
    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        img: Var,
        exit_stage: usize,
    ) -> Result<Vec<StageOutput>> {
        if ps.len() != self.params.len() {
            return Err(usage_err!("parameter store has {} entries, model needs {}", ps.len(), self.params.len()));
        }
        if exit_stage == 0 || exit_stage > self.config.n_stages {
            return Err(usage_err!("exit stage {exit_stage} outside 1..={}", self.config.n_stages));
        }
        self.check_input(g.shape(img))?;
        let last = self.config.n_stages;
        let mut outputs = Vec::with_capacity(exit_stage);
        let carry_feats = |next: usize| next <= exit_stage && self.config.use_csff;

        let (out1, carry1) = self.run_unet(&self.stage1, g, ps, img, None, last == 1, carry_feats(2))?;
        outputs.push(out1);
        if exit_stage == 1 {
            return Ok(outputs);
        }
        let stage2 = self.stage2.as_ref().expect("stage 2 exists when n_stages >= 2");
        let (out2, carry2) = self.run_unet(stage2, g, ps, img, Some(&carry1), last == 2, carry_feats(3))?;
        outputs.push(out2);
        if exit_stage == 2 {
            return Ok(outputs);
        }
        let stage3 = self.stage3.as_ref().expect("stage 3 exists when n_stages == 3");
        outputs.push(self.run_ors(stage3, g, ps, img, &carry2)?);
        Ok(outputs)
    }

    fn run_unet(
        &self,
        st: &UnetStage,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        img: Var,
        prev: Option<&Carry>,
        is_last: bool,
        keep_feats: bool,
    ) -> Result<(StageOutput, Carry)> {
        let n = g.shape(img).n;
        let layout = st.layout;
        let patches = patches_to_batch(g, img, layout)?;
        let mut f = st.stem.forward(g, ps, patches)?;
        let mut injections = None;
        if let Some(prev) = prev {
            let carried = patches_to_batch(g, prev.f_out, layout)?;
            f = g.add(f, carried)?;
            if let Some(csff) = &st.csff_in {
                let mut inj = Vec::with_capacity(csff.n_scales());
                for s in 0..csff.n_scales() {
                    let e = patches_to_batch(g, prev.enc[s], layout)?;
                    let d = patches_to_batch(g, prev.dec[s], layout)?;
                    inj.push(csff.project(g, ps, e, d, s)?);
                }
                injections = Some(inj);
            }
        }
        let out = st.encdec.forward(g, ps, f, injections.as_deref())?;
        let features = batch_to_patches(g, out.features, layout, n)?;
        let (enc, dec) = if keep_feats {
            let enc = out.enc_feats.iter().map(|&v| batch_to_patches(g, v, layout, n)).collect::<Result<Vec<_>>>()?;
            let mut dec = Vec::with_capacity(out.dec_feats.len());
            dec.push(features);
            for &v in &out.dec_feats[1..] {
                dec.push(batch_to_patches(g, v, layout, n)?);
            }
            (enc, dec)
        } else {
            (Vec::new(), Vec::new())
        };
        let (stage_out, f_out) = match &st.bridge {
            Bridge::Sam(sam) => {
                let o = sam.forward(g, ps, features, img)?;
                (StageOutput { x_s: o.x_s, r_s: o.r_s, f_out: Some(o.f_out), supervised: true }, o.f_out)
            }
            Bridge::Head(head) => {
                let r_s = head.forward(g, ps, features)?;
                let x_s = g.add(img, r_s)?;
                (StageOutput { x_s, r_s, f_out: Some(features), supervised: is_last }, features)
            }
        };
        Ok((stage_out, Carry { f_out, enc, dec }))
    }

    fn run_ors(&self, st: &OrsStage, g: &mut Graph<T>, ps: &ParamStore<T>, img: Var, prev: &Carry) -> Result<StageOutput> {
        let f = st.stem.forward(g, ps, img)?;
        let f = g.add(f, prev.f_out)?;
        let injections = match &st.csff_in {
            Some(csff) => {
                let mut inj = Vec::with_capacity(csff.n_scales());
                for s in 0..csff.n_scales() {
                    let mut p = csff.project(g, ps, prev.enc[s], prev.dec[s], s)?;
                    for _ in 0..s {
                        p = g.upsample_bilinear2(p)?;
                    }
                    inj.push(p);
                }
                Some(inj)
            }
            None => None,
        };
        let y = st.orsnet.forward(g, ps, f, injections.as_deref())?;
        let r_s = st.tail.forward(g, ps, y)?;
        let x_s = g.add(img, r_s)?;
        Ok(StageOutput { x_s, r_s, f_out: None, supervised: true })
    }

    /// Restored images of every stage, without recording gradients.
    pub fn infer(&self, img: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::inference();
        let x = g.input(img.detached());
        let outs = self.forward(&mut g, x)?;
        Ok(outs.iter().map(|o| g.value(o.x_s).detached()).collect())
    }

    /// `X_{exit_stage}`, executing only the stages up to it.
    pub fn early_exit_infer(&self, img: &Tensor<T>, exit_stage: usize) -> Result<Tensor<T>> {
        Ok(self.early_exit_counted(img, exit_stage)?.0)
    }

    /// Like [`MprNet::early_exit_infer`], also returning the number of
    /// primitives executed.
    pub fn early_exit_counted(&self, img: &Tensor<T>, exit_stage: usize) -> Result<(Tensor<T>, usize)> {
        let mut g = Graph::inference();
        let x = g.input(img.detached());
        let outs = self.forward_until(&mut g, x, exit_stage)?;
        let last = outs.last().expect("at least one stage ran");
        Ok((g.value(last.x_s).detached(), g.op_count()))
    }

    /// Restores an image of any size: reflect-pads to the required multiple,
    /// runs the network and crops back. Returns every stage's output, or only
    /// the requested exit stage.
    pub fn restore(&self, img: &Tensor<T>, exit_stage: Option<usize>) -> Result<Vec<Tensor<T>>> {
        let s = img.shape();
        let padded = reflect_pad(img, self.config.required_multiple())?;
        let outs = match exit_stage {
            Some(k) => vec![self.early_exit_infer(&padded, k)?],
            None => self.infer(&padded)?,
        };
        outs.iter().map(|o| crop(o, 0, 0, s.h, s.w)).collect()
    }
}

fn reflect_index(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let r = i % period;
    if r < len {
        r
    } else {
        period - r
    }
}

/// Pads bottom and right by mirror reflection (edge not repeated) so both
/// spatial dims become multiples of `multiple`.
pub fn reflect_pad<T: Real>(img: &Tensor<T>, multiple: usize) -> Result<Tensor<T>> {
    if multiple == 0 {
        return Err(usage_err!("padding multiple must be positive"));
    }
    let s = img.shape();
    let h = s.h.div_ceil(multiple) * multiple;
    let w = s.w.div_ceil(multiple) * multiple;
    if (h, w) == (s.h, s.w) {
        return Ok(img.detached());
    }
    let shape = Shape::new(s.n, s.c, h, w)?;
    Ok(Tensor::from_fn(shape, |n, c, y, x| img.get(n, c, reflect_index(y, s.h), reflect_index(x, s.w))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { base_width: 4, n_scales: 2, n_orbs: 2, n_cabs_per_orb: 1, n_cabs_per_scale: 1, cab_reduction: 2, ..Default::default() }
    }

    #[test]
    fn defaults_match_reported_block_counts() {
        let c = ModelConfig::default();
        assert_eq!((c.n_cabs_per_scale, c.n_orbs, c.n_cabs_per_orb), (2, 3, 8));
        assert_eq!(c.n_stages, 3);
    }

    #[test]
    fn stage_count_is_validated() {
        let cfg = ModelConfig { n_stages: 4, ..tiny() };
        assert!(matches!(MprNet::<f64>::new(cfg, 0), Err(Error::Config(_))));
        let cfg = ModelConfig { base_width: 6, cab_reduction: 4, ..tiny() };
        assert!(MprNet::<f64>::new(cfg, 0).is_err());
    }

    #[test]
    fn parameter_names_are_unique_and_counts_deterministic() {
        let a = MprNet::<f64>::new(tiny(), 1).unwrap();
        let b = MprNet::<f64>::new(tiny(), 2).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        let names: std::collections::HashSet<_> = a.params().iter().map(|(_, p)| p.name.clone()).collect();
        assert_eq!(names.len(), a.params().len());
    }

    #[test]
    fn early_exit_range_is_checked() {
        let m = MprNet::<f64>::zeroed(tiny()).unwrap();
        let img = Tensor::zeros(Shape::new(1, 3, 8, 8).unwrap());
        assert!(matches!(m.early_exit_infer(&img, 0), Err(Error::Usage(_))));
        assert!(matches!(m.early_exit_infer(&img, 4), Err(Error::Usage(_))));
    }

    #[test]
    fn indivisible_input_is_a_dimension_error() {
        let m = MprNet::<f64>::zeroed(tiny()).unwrap();
        let img = Tensor::zeros(Shape::new(1, 3, 6, 8).unwrap());
        assert!(matches!(m.infer(&img), Err(Error::Dimension(_))));
    }

    #[test]
    fn reflect_pad_mirrors_without_repeating_edge() {
        let img = Tensor::<f64>::from_fn(Shape::new(1, 1, 1, 3).unwrap(), |_, _, _, x| x as f64);
        let p = reflect_pad(&img, 4).unwrap();
        assert_eq!(p.shape(), Shape::new(1, 1, 4, 4).unwrap());
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 2.0, 1.0]);
        assert_eq!(reflect_index(5, 3), 1);
    }

    #[test]
    fn odd_split_is_rejected() {
        let img = Tensor::<f64>::zeros(Shape::new(1, 3, 5, 4).unwrap());
        assert!(matches!(split_patches(&img, 1), Err(Error::Dimension(_))));
        assert!(split_patches(&img, 3).is_ok());
        let bad = vec![Tensor::<f64>::zeros(Shape::new(1, 3, 2, 2).unwrap()), Tensor::zeros(Shape::new(1, 3, 2, 3).unwrap())];
        assert!(matches!(merge_patches(&bad, 2), Err(Error::Dimension(_))));
    }
}
