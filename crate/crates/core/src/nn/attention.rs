use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Real;

use super::{ForwardCtx, Init, Linear};

/// Multi-head self-attention over `[batch, tokens, width]`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub width: usize,
    pub dropout: f64,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl MultiHeadAttention {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        width: usize,
        heads: usize,
        dropout: f64,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::InvalidConfig(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Self {
            heads,
            width,
            dropout,
            q: Linear::new(store, &format!("{name}.q"), width, width, init, rng)?,
            k: Linear::new(store, &format!("{name}.k"), width, width, init, rng)?,
            v: Linear::new(store, &format!("{name}.v"), width, width, init, rng)?,
            out: Linear::new(store, &format!("{name}.out"), width, width, init, rng)?,
        })
    }

    pub fn forward<'g, F: Real>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        x: Var<'g, F>,
        ctx: &mut ForwardCtx<F>,
    ) -> Var<'g, F> {
        let shape = x.shape();
        let (b, l, d) = (shape[0], shape[1], shape[2]);
        let h = self.heads;
        let dh = d / h;
        let split = |v: Var<'g, F>| v.reshape(&[b, l, h, dh]).permute(&[0, 2, 1, 3]).reshape(&[b * h, l, dh]);
        let q = split(self.q.forward(g, store, x));
        let k = split(self.k.forward(g, store, x));
        let v = split(self.v.forward(g, store, x));
        let scores = q.bmm(k, true).scale(F::lit(1.0 / (dh as f64).sqrt()));
        let attn = ctx.dropout(scores.softmax(), self.dropout);
        let mixed = attn
            .bmm(v, false)
            .reshape(&[b, h, l, dh])
            .permute(&[0, 2, 1, 3])
            .reshape(&[b, l, d]);
        self.out.forward(g, store, mixed)
    }
}
