use std::collections::BTreeMap;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

use super::{Init, Linear};

/// Fixed sinusoids: `scale_i = sin(t * w_i)`, `shift_i = cos(t * w_i)` with
/// `w_i = exp(-ln(1e4) * i / dim)`.
pub fn sinusoid_embed(t: f64, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let ln = 1e4f64.ln();
    (0..dim)
        .map(|i| {
            let w = (-ln * i as f64 / dim as f64).exp();
            ((t * w).sin(), (t * w).cos())
        })
        .unzip()
}

/// Learnable projection of the sinusoids into a FiLM (scale, shift) pair:
/// `Linear(SiLU(Linear(GELU(Linear([sin, cos])))))`, output width `2 * dim`.
#[derive(Clone, Debug)]
pub struct TimeTokenizer {
    pub dim: usize,
    l1: Linear,
    l2: Linear,
    l3: Linear,
}

/// FiLM parameters for a batch: each `[batch, dim]`.
pub struct TimeEmbedding<'g, F: Real> {
    pub scale: Var<'g, F>,
    pub shift: Var<'g, F>,
}

impl TimeTokenizer {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, dim: usize, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("time tokenizer width must be positive".into()));
        }
        let w = 2 * dim;
        Ok(Self {
            dim,
            l1: Linear::new(store, &format!("{name}.0"), w, w, Init::Uniform, rng)?,
            l2: Linear::new(store, &format!("{name}.1"), w, w, Init::Uniform, rng)?,
            l3: Linear::new(store, &format!("{name}.2"), w, w, Init::Uniform, rng)?,
        })
    }

    /// Concatenated `[scale, shift]` of shape `[len(t), 2 * dim]`.
    ///
    /// The stack runs once per distinct time step; rows are then gathered.
    pub fn embed<'g, F: Real>(&self, g: &'g Graph<F>, store: &ParamStore<F>, t: &[f64]) -> Var<'g, F> {
        let mut unique: BTreeMap<u64, usize> = BTreeMap::new();
        let mut values = Vec::new();
        let index: Vec<usize> = t
            .iter()
            .map(|&ti| {
                *unique.entry(ti.to_bits()).or_insert_with(|| {
                    values.push(ti);
                    values.len() - 1
                })
            })
            .collect();
        let mut rows = Vec::with_capacity(values.len() * 2 * self.dim);
        for &v in &values {
            let (s, c) = sinusoid_embed(v, self.dim);
            rows.extend(s.into_iter().chain(c).map(F::lit));
        }
        let input = g.constant(Tensor::from_parts(vec![values.len(), 2 * self.dim], rows));
        let h = self.l1.forward(g, store, input).gelu();
        let h = self.l2.forward(g, store, h).silu();
        let out = self.l3.forward(g, store, h);
        if values.len() == t.len() && index.iter().enumerate().all(|(i, &j)| i == j) {
            out
        } else {
            out.gather_rows(&index)
        }
    }

    pub fn forward<'g, F: Real>(&self, g: &'g Graph<F>, store: &ParamStore<F>, t: &[f64]) -> TimeEmbedding<'g, F> {
        let e = self.embed(g, store, t);
        TimeEmbedding {
            scale: e.narrow(1, 0, self.dim),
            shift: e.narrow(1, self.dim, self.dim),
        }
    }
}

/// `x * (scale + 1) + shift`; `scale` and `shift` must already match `x`.
pub fn film<'g, F: Real>(x: Var<'g, F>, scale: Var<'g, F>, shift: Var<'g, F>) -> Var<'g, F> {
    x.mul(scale.add_scalar(F::one())).add(shift)
}
