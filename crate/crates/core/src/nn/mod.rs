//! Layers shared by the denoisers.
//!
//! Layers only hold [`ParamId`]s; values live in a
//! [`ParamStore`](crate::params::ParamStore) and are bound to a
//! [`Graph`](crate::autograd::Graph) on every forward pass. Linear weights are stored as
//! `[in, out]`.

mod attention;
mod layers;
mod time;

pub use attention::MultiHeadAttention;
pub use layers::{BatchNorm1d, Conv1d, GroupNorm, Init, LayerNorm, Linear};
pub(crate) use layers::largest_divisor_at_most as layers_largest_divisor;
pub use time::{film, sinusoid_embed, TimeEmbedding, TimeTokenizer};

use crate::autograd::Var;
use crate::params::ParamId;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Per-pass state: training flag, dropout randomness, and pending buffer
/// updates (batch-norm running statistics) to apply after the pass.
pub struct ForwardCtx<F: Real = f64> {
    train: bool,
    rng: Rng,
    updates: Vec<(ParamId, Tensor<F>)>,
}

impl<F: Real> ForwardCtx<F> {
    /// Evaluation mode: dropout is the identity, batch norm uses running statistics.
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: Rng::new(0),
            updates: Vec::new(),
        }
    }

    /// Training mode with dropout masks drawn from `rng`.
    pub fn train(rng: Rng) -> Self {
        Self {
            train: true,
            rng,
            updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1 / (1 - p)`.
    pub fn dropout<'g>(&mut self, x: Var<'g, F>, p: f64) -> Var<'g, F> {
        if !self.train || p == 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let scale = F::lit(1.0 / keep);
        let mask = Tensor::from_fn(&x.shape(), |_| {
            if self.rng.bernoulli(keep) {
                scale
            } else {
                F::zero()
            }
        });
        x.mul_const(mask)
    }

    pub(crate) fn queue_update(&mut self, id: ParamId, value: Tensor<F>) {
        self.updates.push((id, value));
    }

    /// Buffer values computed during the pass, in the order they were produced.
    pub fn take_updates(&mut self) -> Vec<(ParamId, Tensor<F>)> {
        std::mem::take(&mut self.updates)
    }
}

#[cfg(test)]
mod tests;
