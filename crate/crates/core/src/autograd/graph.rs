use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use crate::error::{dim_err, usage_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used for op accounting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Param,
    Conv2d,
    MaxPool2,
    Upsample2,
    GlobalAvgPool,
    Relu,
    Prelu,
    Sigmoid,
    Add,
    Sub,
    Mul,
    MulChannel,
    Concat,
    Narrow,
    Laplacian,
    Charbonnier,
    Sum,
    Scale,
}

/// Elementwise nonlinearity selector for [`Graph::activation`].
#[derive(Clone, Copy, Debug)]
pub enum Activation {
    Relu,
    /// Leaky slope taken from a scalar node.
    Prelu(Var),
    Sigmoid,
}

enum Op {
    Input,
    Param(ParamId),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Upsample2 { input: Var },
    GlobalAvgPool { input: Var },
    Relu { input: Var },
    Prelu { input: Var, slope: Var },
    Sigmoid { input: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulChannel { x: Var, gate: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { input: Var, axis: usize, start: usize },
    Laplacian { input: Var },
    Charbonnier { a: Var, b: Var, eps: f64 },
    Sum { input: Var },
    Scale { input: Var, factor: f64 },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Param(_) => OpKind::Param,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2 { .. } => OpKind::MaxPool2,
            Op::Upsample2 { .. } => OpKind::Upsample2,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Relu { .. } => OpKind::Relu,
            Op::Prelu { .. } => OpKind::Prelu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::MulChannel { .. } => OpKind::MulChannel,
            Op::Concat { .. } => OpKind::Concat,
            Op::Narrow { .. } => OpKind::Narrow,
            Op::Laplacian { .. } => OpKind::Laplacian,
            Op::Charbonnier { .. } => OpKind::Charbonnier,
            Op::Sum { .. } => OpKind::Sum,
            Op::Scale { .. } => OpKind::Scale,
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// A recording tape for reverse-mode differentiation.
///
/// Every operation evaluates eagerly and appends a node; node ids are
/// therefore topologically ordered and [`Graph::backward`] walks them in
/// strict reverse recording order.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
    op_count: usize,
    fault: Option<(OpKind, f64)>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), param_vars: HashMap::new(), grad_enabled: true, op_count: 0, fault: None }
    }

    /// A tape that records values only; `backward` is rejected.
    pub fn inference() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    /// Number of non-leaf primitives executed so far.
    pub fn op_count(&self) -> usize {
        self.op_count
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: multiplies every gradient produced by `kind` by `scale`.
    pub fn inject_fault(&mut self, kind: OpKind, scale: f64) {
        self.fault = Some((kind, scale));
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of an input leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Kind of the primitive that produced `v`.
    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Records an input leaf. Gradients are kept when the tensor has
    /// `requires_grad` set.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = self.grad_enabled && t.requires_grad();
        let mut value = t;
        value.zero_grad();
        self.nodes.push(Node { value, op: Op::Input, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node, so
    /// a parameter's gradient is fully summed before it reaches the store.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = store.tensor(id).detached();
        self.nodes.push(Node { value, op: Op::Param(id), needs_grad: self.grad_enabled });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn push(&mut self, shape: Shape, data: Vec<T>, op: Op, inputs: &[Var]) -> Result<Var> {
        let needs_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let value = Tensor::new(shape, data)?;
        self.nodes.push(Node { value, op, needs_grad });
        self.op_count += 1;
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err!("{op}: shape mismatch {sa} vs {sb}"));
        }
        Ok(sa)
    }

    /// Cross-correlation with zero padding. `weight` is `(out_c, in_c, kh, kw)`
    /// and `bias`, when given, holds `out_c` values.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(weight), stride, padding)?;
        if let Some(b) = bias {
            if self.shape(b).numel() != geom.co {
                return Err(dim_err!("conv2d bias {} does not hold {} values", self.shape(b), geom.co));
            }
        }
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(geom.out_shape(), out, Op::Conv2d { input, weight, bias, geom }, &inputs)
    }

    /// 2×2 max pooling with stride 2.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(dim_err!("max_pool2 needs even spatial dims, got {s}"));
        }
        let (out, argmax) = kernels::max_pool2_forward(self.value(input).data(), s);
        self.push(Shape { h: s.h / 2, w: s.w / 2, ..s }, out, Op::MaxPool2 { input, argmax }, &[input])
    }

    /// Bilinear ×2 upsampling with half-pixel centers.
    pub fn upsample_bilinear2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let out = kernels::upsample2_forward(self.value(input).data(), s);
        self.push(Shape { h: 2 * s.h, w: 2 * s.w, ..s }, out, Op::Upsample2 { input }, &[input])
    }

    /// Spatial mean of each channel, giving `(n, c, 1, 1)`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let inv = T::one() / T::of(s.spatial() as f64);
        let out = self.value(input).data().chunks(s.spatial()).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        self.push(Shape { h: 1, w: 1, ..s }, out, Op::GlobalAvgPool { input }, &[input])
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(input),
            Activation::Prelu(slope) => self.prelu(input, slope),
            Activation::Sigmoid => self.sigmoid(input),
        }
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let out = self.value(input).data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        self.push(s, out, Op::Relu { input }, &[input])
    }

    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var> {
        let s = self.shape(input);
        if !self.shape(slope).is_scalar() {
            return Err(dim_err!("prelu slope must be a scalar, got {}", self.shape(slope)));
        }
        let a = self.value(slope).data()[0];
        let out = self.value(input).data().iter().map(|&x| if x > T::zero() { x } else { a * x }).collect();
        self.push(s, out, Op::Prelu { input, slope }, &[input, slope])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let out = self.value(input).data().iter().map(|&x| T::one() / (T::one() + (-x).exp())).collect();
        self.push(s, out, Op::Sigmoid { input }, &[input])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(s, out, Op::Add { a, b }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(s, out, Op::Sub { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(s, out, Op::Mul { a, b }, &[a, b])
    }

    /// `x ⊙ gate` where `gate` is `(n, c, 1, 1)` and broadcasts spatially.
    pub fn mul_channel(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (sx, sg) = (self.shape(x), self.shape(gate));
        if sg != (Shape { h: 1, w: 1, ..sx }) {
            return Err(dim_err!("mul_channel: gate {sg} does not broadcast over {sx}"));
        }
        let gv = self.value(gate).data();
        let out = self
            .value(x)
            .data()
            .chunks(sx.spatial())
            .zip(gv)
            .flat_map(|(plane, &g)| plane.iter().map(move |&v| v * g))
            .collect();
        self.push(sx, out, Op::MulChannel { x, gate }, &[x, gate])
    }

    /// Concatenates along `axis` (0 = batch, 1 = channel, 2 = rows, 3 = cols).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if axis > 3 {
            return Err(usage_err!("concat axis {axis} out of range"));
        }
        let first = *inputs.first().ok_or_else(|| usage_err!("concat of an empty list"))?;
        let s0 = self.shape(first);
        let mut dims = s0.dims();
        dims[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            for d in 0..4 {
                if d != axis && s.dims()[d] != s0.dims()[d] {
                    return Err(dim_err!("concat along axis {axis}: {s} does not match {s0}"));
                }
            }
            dims[axis] += s.dims()[axis];
        }
        let out_shape = Shape::from_dims(dims)?;
        let (outer, _, inner) = kernels::axis_split(out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.numel());
        for o in 0..outer {
            for &v in inputs {
                let (_, len, _) = kernels::axis_split(self.shape(v), axis);
                let block = len * inner;
                out.extend_from_slice(&self.value(v).data()[o * block..(o + 1) * block]);
            }
        }
        self.push(out_shape, out, Op::Concat { inputs: inputs.to_vec(), axis }, inputs)
    }

    /// Channel concatenation of two tensors with matching `n, h, w`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.concat(&[a, b], 1)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        if axis > 3 {
            return Err(usage_err!("narrow axis {axis} out of range"));
        }
        let s = self.shape(input);
        if len == 0 || start + len > s.dims()[axis] {
            return Err(dim_err!("narrow [{start}, {}) outside axis {axis} of {s}", start + len));
        }
        let (outer, full, inner) = kernels::axis_split(s, axis);
        let mut dims = s.dims();
        dims[axis] = len;
        let data = self.value(input).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        self.push(Shape::from_dims(dims)?, out, Op::Narrow { input, axis, start }, &[input])
    }

    /// Per-channel 3×3 Laplacian `[[0,1,0],[1,-4,1],[0,1,0]]`, zero padded.
    pub fn laplacian(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let out = kernels::laplacian(self.value(input).data(), s);
        self.push(s, out, Op::Laplacian { input }, &[input])
    }

    /// Mean over elements of `sqrt((a - b)^2 + eps^2)`, as a scalar node.
    ///
    /// Evaluated as `eps + mean(d^2 / (sqrt(d^2 + eps^2) + eps))`, which is
    /// algebraically identical and yields exactly `eps` when `a == b`.
    pub fn charbonnier(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.same_shape("charbonnier", a, b)?;
        if !(eps > 0.0) {
            return Err(usage_err!("charbonnier epsilon must be positive, got {eps}"));
        }
        let e = T::of(eps);
        let mut excess = T::zero();
        for (&x, &y) in self.value(a).data().iter().zip(self.value(b).data()) {
            let d = x - y;
            let d2 = d * d;
            excess = excess + d2 / ((d2 + e * e).sqrt() + e);
        }
        let n = T::of(self.value(a).numel() as f64);
        self.push(Shape::scalar(), vec![e + excess / n], Op::Charbonnier { a, b, eps }, &[a, b])
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total = self.value(input).data().iter().copied().sum::<T>();
        self.push(Shape::scalar(), vec![total], Op::Sum { input }, &[input])
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let s = self.shape(input);
        let f = T::of(factor);
        let out = self.value(input).data().iter().map(|&x| x * f).collect();
        self.push(s, out, Op::Scale { input, factor }, &[input])
    }

    /// Reverse pass from a scalar root.
    ///
    /// Parameter gradients are added into `params`; input-leaf gradients into
    /// the leaf's own slot (see [`Graph::grad`]). Nothing is zeroed first, so
    /// repeated calls accumulate.
    pub fn backward(&mut self, root: Var, params: &mut ParamStore<T>) -> Result<()> {
        if !self.grad_enabled {
            return Err(usage_err!("backward on an inference-only graph"));
        }
        let rs = self.shape(root);
        if !rs.is_scalar() {
            return Err(usage_err!("backward root must be a scalar, got {rs}"));
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Input => {
                    self.nodes[i].value.accumulate_grad(&g)?;
                }
                Op::Param(id) => {
                    let id = *id;
                    if id.index() >= params.len() {
                        return Err(usage_err!("parameter {} missing from the store", id.index()));
                    }
                    params.get_mut(id).tensor.accumulate_grad(&g)?;
                }
                op => {
                    let kind = op.kind();
                    let mut contribs = self.op_backward(i, &g);
                    if let Some((fk, scale)) = self.fault {
                        if fk == kind {
                            let s = T::of(scale);
                            for (_, gv) in &mut contribs {
                                gv.iter_mut().for_each(|v| *v = *v * s);
                            }
                        }
                    }
                    for (v, gv) in contribs {
                        if !self.nodes[v.0].needs_grad {
                            continue;
                        }
                        match &mut adj[v.0] {
                            Some(acc) => acc.iter_mut().zip(&gv).for_each(|(a, &b)| *a = *a + b),
                            slot @ None => *slot = Some(gv),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn op_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.value(v).data();
        let mut res = Vec::new();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let grads = kernels::conv2d_backward(
                    val(*input),
                    val(*weight),
                    g,
                    geom,
                    self.wants(*input),
                    self.wants(*weight),
                    bias.is_some_and(|b| self.wants(b)),
                );
                if let Some(dx) = grads.input {
                    res.push((*input, dx));
                }
                if let Some(dw) = grads.weight {
                    res.push((*weight, dw));
                }
                if let (Some(b), Some(db)) = (bias, grads.bias) {
                    res.push((*b, db));
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = vec![T::zero(); self.value(*input).numel()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    dx[idx as usize] = dx[idx as usize] + gv;
                }
                res.push((*input, dx));
            }
            Op::Upsample2 { input } => {
                res.push((*input, kernels::upsample2_backward(g, self.shape(*input))));
            }
            Op::GlobalAvgPool { input } => {
                let s = self.shape(*input);
                let inv = T::one() / T::of(s.spatial() as f64);
                let dx = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, s.spatial())).collect();
                res.push((*input, dx));
            }
            Op::Relu { input } => {
                let dx = val(*input).iter().zip(g).map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() }).collect();
                res.push((*input, dx));
            }
            Op::Prelu { input, slope } => {
                let a = val(*slope)[0];
                let x = val(*input);
                if self.wants(*input) {
                    let dx = x.iter().zip(g).map(|(&xv, &gv)| if xv > T::zero() { gv } else { a * gv }).collect();
                    res.push((*input, dx));
                }
                if self.wants(*slope) {
                    let da = x.iter().zip(g).filter(|(&xv, _)| xv <= T::zero()).map(|(&xv, &gv)| xv * gv).sum::<T>();
                    res.push((*slope, vec![da]));
                }
            }
            Op::Sigmoid { input } => {
                let dx = out.iter().zip(g).map(|(&y, &gv)| gv * y * (T::one() - y)).collect();
                res.push((*input, dx));
            }
            Op::Add { a, b } => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.to_vec()));
            }
            Op::Sub { a, b } => {
                res.push((*a, g.to_vec()));
                res.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul { a, b } => {
                if self.wants(*a) {
                    res.push((*a, g.iter().zip(val(*b)).map(|(&gv, &y)| gv * y).collect()));
                }
                if self.wants(*b) {
                    res.push((*b, g.iter().zip(val(*a)).map(|(&gv, &x)| gv * x).collect()));
                }
            }
            Op::MulChannel { x, gate } => {
                let sp = self.shape(*x).spatial();
                if self.wants(*x) {
                    let dx = g
                        .chunks(sp)
                        .zip(val(*gate))
                        .flat_map(|(gp, &gt)| gp.iter().map(move |&gv| gv * gt))
                        .collect();
                    res.push((*x, dx));
                }
                if self.wants(*gate) {
                    let dg = g
                        .chunks(sp)
                        .zip(val(*x).chunks(sp))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&gv, &xv)| gv * xv).sum::<T>())
                        .collect();
                    res.push((*gate, dg));
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = kernels::axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let (_, len, _) = kernels::axis_split(self.shape(v), *axis);
                    if self.wants(v) {
                        let mut dv = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            dv.extend_from_slice(&g[base..base + len * inner]);
                        }
                        res.push((v, dv));
                    }
                    offset += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let (outer, full, inner) = kernels::axis_split(self.shape(*input), *axis);
                let len = node.value.shape().dims()[*axis];
                let mut dx = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let base = o * full * inner + start * inner;
                    dx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                res.push((*input, dx));
            }
            Op::Laplacian { input } => {
                res.push((*input, kernels::laplacian(g, self.shape(*input))));
            }
            Op::Charbonnier { a, b, eps } => {
                let e = T::of(*eps);
                let n = T::of(self.value(*a).numel() as f64);
                let scale = g[0] / n;
                let da: Vec<T> = val(*a)
                    .iter()
                    .zip(val(*b))
                    .map(|(&x, &y)| {
                        let d = x - y;
                        scale * d / (d * d + e * e).sqrt()
                    })
                    .collect();
                if self.wants(*b) {
                    res.push((*b, da.iter().map(|&v| -v).collect()));
                }
                if self.wants(*a) {
                    res.push((*a, da));
                }
            }
            Op::Sum { input } => {
                res.push((*input, vec![g[0]; self.value(*input).numel()]));
            }
            Op::Scale { input, factor } => {
                let f = T::of(*factor);
                res.push((*input, g.iter().map(|&v| v * f).collect()));
            }
        }
        res
    }
}
