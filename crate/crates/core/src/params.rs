//! Named parameter storage with matching gradient slots.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Index of an entry in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<F: Real> {
    name: String,
    value: Tensor<F>,
    grad: Tensor<F>,
    trainable: bool,
}

/// Ordered collection of named tensors.
///
/// Trainable entries are optimized; buffers (e.g. batch-norm running
/// statistics) are stored and checkpointed but never receive gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Real = f64> {
    entries: Vec<Entry<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        self.insert(name.into(), value, true)
    }

    /// Registers a non-trainable buffer.
    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor<F>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(Entry {
            name,
            value,
            grad,
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    /// Replaces a value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::shape("set_value", e.value.shape(), value.shape()));
        }
        e.value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].grad
    }

    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor<F>, &Tensor<F>) {
        let e = &mut self.entries[id.0];
        (&mut e.value, &e.grad)
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor<F>) {
        let e = &mut self.entries[id.0];
        assert_eq!(e.grad.shape(), grad.shape(), "gradient shape for {}", e.name);
        if !e.trainable {
            return;
        }
        for (a, &b) in e.grad.data_mut().iter_mut().zip(grad.data()) {
            *a += b;
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = F::zero());
        }
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }
}
