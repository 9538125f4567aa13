use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::nn::{ForwardCtx, Linear, TimeTokenizer};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Real;

use super::{DenoiserConfig, TimeStepMlp};

/// `Linear(TimeStepMLP(... TimeStepMLP(x)))`.
#[derive(Clone, Debug)]
pub struct Mlp {
    tokenizer: Option<TimeTokenizer>,
    blocks: Vec<TimeStepMlp>,
    head: Linear,
}

impl Mlp {
    pub fn new<F: Real>(c: &DenoiserConfig, store: &mut ParamStore<F>, rng: &mut Rng) -> Result<Self> {
        let init = c.init();
        let tokenizer = if c.time_tokenizer {
            Some(TimeTokenizer::new(store, "time", c.hidden, rng)?)
        } else {
            None
        };
        let blocks = (0..c.blocks)
            .map(|i| {
                let fan_in = if i == 0 { c.k } else { c.hidden };
                TimeStepMlp::new(store, &format!("blocks.{i}"), fan_in, c.hidden, c.ffn_dropout, init, rng)
            })
            .collect::<Result<_>>()?;
        let head = Linear::new(store, "head", c.hidden, c.k, init, rng)?;
        Ok(Self { tokenizer, blocks, head })
    }

    pub fn forward<'g, F: Real>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        x: Var<'g, F>,
        t: &[f64],
        ctx: &mut ForwardCtx<F>,
    ) -> Var<'g, F> {
        let emb = self.tokenizer.as_ref().map(|tok| tok.forward(g, store, t));
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(g, store, h, emb.as_ref(), ctx);
        }
        self.head.forward(g, store, h)
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }
}
