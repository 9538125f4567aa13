use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::nn::{BatchNorm1d, ForwardCtx, Linear, TimeTokenizer};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Real;

use super::{DenoiserConfig, TimeStepMlp};

#[derive(Clone, Debug)]
struct ResBlock {
    norm: BatchNorm1d,
    mlp: TimeStepMlp,
    out: Linear,
}

/// `Prediction(ResBlock(... ResBlock(Linear(x))))` with
/// `ResBlock(x) = x + Dropout(Linear(TimeStepMLP(BatchNorm(x))))` and
/// `Prediction(x) = Linear(ReLU(BatchNorm(x)))`.
#[derive(Clone, Debug)]
pub struct ResNet {
    tokenizer: Option<TimeTokenizer>,
    input: Linear,
    blocks: Vec<ResBlock>,
    final_norm: BatchNorm1d,
    head: Linear,
    residual_dropout: f64,
}

impl ResNet {
    pub fn new<F: Real>(c: &DenoiserConfig, store: &mut ParamStore<F>, rng: &mut Rng) -> Result<Self> {
        let init = c.init();
        let h = c.hidden;
        let tokenizer = if c.time_tokenizer {
            Some(TimeTokenizer::new(store, "time", h, rng)?)
        } else {
            None
        };
        let input = Linear::new(store, "input", c.k, h, init, rng)?;
        let blocks = (0..c.blocks)
            .map(|i| {
                let name = format!("blocks.{i}");
                Ok(ResBlock {
                    norm: BatchNorm1d::new(store, &format!("{name}.norm"), h)?,
                    mlp: TimeStepMlp::new(store, &format!("{name}.mlp"), h, h, c.ffn_dropout, init, rng)?,
                    out: Linear::new(store, &format!("{name}.out"), h, h, init, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            tokenizer,
            input,
            blocks,
            final_norm: BatchNorm1d::new(store, "head_norm", h)?,
            head: Linear::new(store, "head", h, c.k, init, rng)?,
            residual_dropout: c.residual_dropout,
        })
    }

    pub fn forward<'g, F: Real>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        x: Var<'g, F>,
        t: &[f64],
        ctx: &mut ForwardCtx<F>,
    ) -> Result<Var<'g, F>> {
        let emb = self.tokenizer.as_ref().map(|tok| tok.forward(g, store, t));
        let mut h = self.input.forward(g, store, x);
        for b in &self.blocks {
            let z = b.norm.forward(g, store, h, ctx)?;
            let z = b.mlp.forward(g, store, z, emb.as_ref(), ctx);
            let z = b.out.forward(g, store, z);
            h = h.add(ctx.dropout(z, self.residual_dropout));
        }
        let z = self.final_norm.forward(g, store, h, ctx)?.relu();
        Ok(self.head.forward(g, store, z))
    }

    /// Output linear of each residual branch (zeroing these leaves only the skip path).
    pub fn branch_outputs(&self) -> impl Iterator<Item = &Linear> {
        self.blocks.iter().map(|b| &b.out)
    }
}
