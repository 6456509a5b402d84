use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Gaussian init with standard deviation `gain/sqrt(fan_in)`.
    pub fn insert_scaled(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let std = gain / (fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let t = Tensor::from_fn(shape, |_| normal.sample(rng));
        self.insert(name, t)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replaces values positionally from a set that extends this one.
    pub(crate) fn copy_prefix_from(&mut self, other: &ParamSet) {
        for i in 0..self.values.len() {
            debug_assert_eq!(self.names[i], other.names[i]);
            self.values[i] = other.values[i].clone();
        }
    }

    /// Copy of the parameters whose names satisfy `keep`, in order.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, value) in self.iter().filter(|(n, _)| keep(n)) {
            out.insert(name, value.clone());
        }
        out
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Overwrites values by name from `other`; every name in `other` must exist with the same shape.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        for (name, value) in other.iter() {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
            if self.values[id.0].shape() != value.shape() {
                return Err(Error::dim("load_params", self.values[id.0].shape(), value.shape()));
            }
            self.values[id.0] = value.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradient buffers, indexed like the owning [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    grads: Vec<Option<Tensor>>,
}

impl GradBuffer {
    pub fn new(params: &ParamSet) -> Self {
        GradBuffer {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_ref()))
    }

    /// True when no parameter received any non-zero gradient entry.
    pub fn is_zero(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.data().iter().all(|&v| v == 0.0))
    }
}

/// A forward pass: a fresh tape plus lazily bound parameter leaves.
pub struct Session<'p> {
    pub graph: Graph,
    params: &'p ParamSet,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'p> Session<'p> {
    /// Session whose parameters accumulate gradients.
    pub fn train(params: &'p ParamSet) -> Self {
        Self::with_mode(params, true)
    }

    /// Session whose parameters are plain constants.
    pub fn inference(params: &'p ParamSet) -> Self {
        Self::with_mode(params, false)
    }

    fn with_mode(params: &'p ParamSet, trainable: bool) -> Self {
        Session {
            graph: Graph::new(),
            params,
            bound: vec![None; params.len()],
            trainable,
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self
            .graph
            .leaf(self.params.get(id).clone(), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Runs the reverse sweep and collects gradients of every bound parameter.
    pub fn backward(&mut self, loss: Var) -> Result<GradBuffer> {
        self.graph.backward(loss)?;
        Ok(self.gradients())
    }

    pub fn gradients(&self) -> GradBuffer {
        let grads = self
            .bound
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.and_then(|v| self.graph.grad(v).cloned())
                    .or_else(|| v.map(|_| Tensor::zeros(self.params.values[i].shape())))
            })
            .collect();
        GradBuffer { grads }
    }
}
