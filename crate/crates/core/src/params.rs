//! Named, trainable parameters.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with a hierarchical dotted name such as
/// `stage1.encdec.enc0.cab1.conv1.weight`.
#[derive(Clone, Debug)]
pub struct Parameter<T: Real> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Ordered collection of parameters with unique names.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Real> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, tensor: tensor.with_requires_grad() });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Allocates a zero gradient for every parameter that has none.
    pub fn fill_missing_grads(&mut self) {
        for p in &mut self.params {
            if p.tensor.grad().is_none() {
                let zeros = vec![T::zero(); p.tensor.numel()];
                p.tensor.accumulate_grad(&zeros).expect("length matches");
            }
        }
    }

    /// Sets every parameter value to zero.
    pub fn fill_zero(&mut self) {
        for p in &mut self.params {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Copies the store into another precision. Gradients are dropped.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), tensor: p.tensor.cast::<U>().with_requires_grad() })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Registers parameters under a dotted name prefix with seeded initial values.
///
/// Convolution weights are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
/// biases start at zero and PReLU slopes at 0.25.
pub struct ParamBuilder<'a, T: Real, R: Rng> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut R,
    prefix: String,
}

impl<'a, T: Real, R: Rng> ParamBuilder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    /// A builder whose names are nested one level below this one.
    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_, T, R> {
        let prefix = self.path(name);
        ParamBuilder { store: self.store, rng: self.rng, prefix }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn conv_weight(&mut self, name: &str, out_c: usize, in_c: usize, k: usize) -> Result<ParamId> {
        let shape = Shape::new(out_c, in_c, k, k)?;
        let bound = 1.0 / ((in_c * k * k) as f64).sqrt();
        let t = Tensor::rand_uniform(shape, -bound, bound, self.rng);
        self.store.add(self.path(name), t)
    }

    pub fn bias(&mut self, name: &str, len: usize) -> Result<ParamId> {
        self.store.add(self.path(name), Tensor::zeros(Shape::new(1, len, 1, 1)?))
    }

    pub fn prelu_slope(&mut self, name: &str) -> Result<ParamId> {
        self.store.add(self.path(name), Tensor::scalar(T::of(0.25)))
    }
}
