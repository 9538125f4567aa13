//! Taped reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with
//! a closure that maps the output gradient to input gradients. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse. A graph built
//! with [`Graph::inference`] records values only, which is what the sampler
//! uses.
//!
//! Non-finite values do not abort an expression mid-way; the first operation
//! that produced one is remembered and reported by [`Graph::check_finite`].

mod ops;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

type BackwardFn<F> = Box<dyn Fn(&Tensor<F>) -> Vec<Tensor<F>>>;

struct Node<F: Real> {
    value: Rc<Tensor<F>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<F>>,
    requires_grad: bool,
}

/// Operation tape.
pub struct Graph<F: Real = f64> {
    nodes: RefCell<Vec<Node<F>>>,
    record: bool,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
    non_finite: RefCell<Option<&'static str>>,
}

/// Handle to a value on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, F: Real = f64> {
    graph: &'g Graph<F>,
    id: usize,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    /// A graph that records backward closures.
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A graph that only evaluates; [`Graph::backward`] yields no parameter gradients.
    pub fn inference() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(record: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            record,
            param_nodes: RefCell::new(HashMap::new()),
            non_finite: RefCell::new(None),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    /// Leaf that does not take gradients (inputs, masks, targets).
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.leaf(value, false)
    }

    /// Leaf whose gradient is tracked (e.g. an input under test).
    pub fn variable(&self, value: Tensor<F>) -> Var<'_, F> {
        self.leaf(value, self.record)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so a graph must only ever be used with one store.
    pub fn param(&self, store: &ParamStore<F>, id: ParamId) -> Var<'_, F> {
        if let Some(&node) = self.param_nodes.borrow().get(&id) {
            return Var { graph: self, id: node };
        }
        let var = self.leaf(store.value(id).clone(), self.record);
        self.param_nodes.borrow_mut().insert(id, var.id);
        var
    }

    fn leaf(&self, value: Tensor<F>, requires_grad: bool) -> Var<'_, F> {
        self.note_finite(&value, "leaf");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn note_finite(&self, value: &Tensor<F>, op: &'static str) {
        if !value.is_finite() {
            let mut slot = self.non_finite.borrow_mut();
            if slot.is_none() {
                *slot = Some(op);
            }
        }
    }

    /// Appends an operation result. `backward` receives the output gradient
    /// and must return one gradient per parent, in order.
    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor<F>,
        parents: &[usize],
        backward: impl Fn(&Tensor<F>) -> Vec<Tensor<F>> + 'static,
    ) -> Var<'_, F> {
        self.note_finite(&value, op);
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.record && parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.to_vec(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<F>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Fails if any recorded value was NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        match *self.non_finite.borrow() {
            Some(op) => Err(Error::NonFinite(op.to_string())),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if loss_value.len() != 1 {
            return Err(Error::InvalidShape {
                shape: loss_value.shape().to_vec(),
                reason: "backward needs a scalar loss".into(),
            });
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(loss_value.shape(), F::one()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let parent_grads = backward(&grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        // Leaves have no backward closure, so their gradients are still in place.
        let params = self.param_nodes.borrow().clone();
        Ok(Gradients { grads, params })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<F: Real> {
    grads: Vec<Option<Tensor<F>>>,
    params: HashMap<ParamId, usize>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to a leaf, if it received one.
    pub fn get(&self, var: Var<'_, F>) -> Option<&Tensor<F>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params
            .get(&id)
            .and_then(|&n| self.grads.get(n))
            .and_then(Option::as_ref)
    }

    /// Adds every parameter gradient into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore<F>) {
        for (&id, &node) in &self.params {
            if let Some(Some(g)) = self.grads.get(node) {
                store.accumulate_grad(id, g);
            }
        }
    }
}

impl<'g, F: Real> Var<'g, F> {
    pub fn graph(&self) -> &'g Graph<F> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<F>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Copy of the current value.
    pub fn to_tensor(&self) -> Tensor<F> {
        (*self.value()).clone()
    }
}

#[cfg(test)]
mod tests;
