use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::nn::{film, ForwardCtx, LayerNorm, Linear, MultiHeadAttention, TimeTokenizer};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Real;

use super::DenoiserConfig;

#[derive(Clone, Debug)]
struct TransBlock {
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    ffn_norm: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

/// Feature-tokenizer transformer. Each feature `j` becomes the token
/// `b_j + x_j * W_j`; a CLS token is prepended. Blocks are pre-norm
/// attention and a ReGLU feed-forward whose hidden state is FiLM-modulated.
/// The CLS token is dropped at the end and a shared
/// `Linear(ReLU(LayerNorm(.)))` maps every feature token to one output.
#[derive(Clone, Debug)]
pub struct Transformer {
    tokenizer: Option<TimeTokenizer>,
    feature_weight: ParamId,
    feature_bias: ParamId,
    cls: ParamId,
    blocks: Vec<TransBlock>,
    head_norm: LayerNorm,
    head: Linear,
    ffn_hidden: usize,
    ffn_dropout: f64,
    residual_dropout: f64,
}

impl Transformer {
    pub fn new<F: Real>(c: &DenoiserConfig, store: &mut ParamStore<F>, rng: &mut Rng) -> Result<Self> {
        let init = c.init();
        let d = c.embed_dim;
        let fh = c.ffn_hidden();
        let tokenizer = if c.time_tokenizer {
            Some(TimeTokenizer::new(store, "time", fh, rng)?)
        } else {
            None
        };
        let feature_weight = store.add("features.weight", init.weight(rng, &[c.k, d], d))?;
        let feature_bias = store.add("features.bias", init.weight(rng, &[c.k, d], d))?;
        let cls = store.add("cls", init.weight(rng, &[d], d))?;
        let blocks = (0..c.blocks)
            .map(|i| {
                let name = format!("blocks.{i}");
                Ok(TransBlock {
                    attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d)?,
                    attn: MultiHeadAttention::new(
                        store,
                        &format!("{name}.attn"),
                        d,
                        c.heads,
                        c.attention_dropout,
                        init,
                        rng,
                    )?,
                    ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d)?,
                    ffn_in: Linear::new(store, &format!("{name}.ffn_in"), d, 2 * fh, init, rng)?,
                    ffn_out: Linear::new(store, &format!("{name}.ffn_out"), fh, d, init, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            tokenizer,
            feature_weight,
            feature_bias,
            cls,
            blocks,
            head_norm: LayerNorm::new(store, "head_norm", d)?,
            head: Linear::new(store, "head", d, 1, init, rng)?,
            ffn_hidden: fh,
            ffn_dropout: c.ffn_dropout,
            residual_dropout: c.residual_dropout,
        })
    }

    /// Token states `[batch, k + 1, d]` entering the prediction head, and
    /// the pre-activation of every feed-forward layer (for diagnostics).
    pub(crate) fn trunk<'g, F: Real>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        x: Var<'g, F>,
        t: &[f64],
        ctx: &mut ForwardCtx<F>,
    ) -> (Var<'g, F>, Vec<Var<'g, F>>) {
        let b = x.shape()[0];
        let emb = self.tokenizer.as_ref().map(|tok| tok.forward(g, store, t));
        let cls = g.param(store, self.cls);
        let d = cls.shape()[0];
        let tokens = x.feature_embed(g.param(store, self.feature_weight), g.param(store, self.feature_bias));
        let cls = cls.expand(0, b).reshape(&[b, 1, d]);
        let mut h = g.concat(&[cls, tokens], 1);
        let len = h.shape()[1];
        let film_params = emb.map(|e| (e.scale.expand(1, len), e.shift.expand(1, len)));
        let mut pre_activations = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let a = blk.attn.forward(g, store, blk.attn_norm.forward(g, store, h), ctx);
            h = h.add(ctx.dropout(a, self.residual_dropout));
            let z = blk.ffn_in.forward(g, store, blk.ffn_norm.forward(g, store, h));
            pre_activations.push(z);
            let fh = self.ffn_hidden;
            let mut z = z.narrow(2, 0, fh).mul(z.narrow(2, fh, fh).relu());
            if let Some((scale, shift)) = film_params {
                z = film(z, scale, shift);
            }
            let z = blk.ffn_out.forward(g, store, ctx.dropout(z, self.ffn_dropout));
            h = h.add(ctx.dropout(z, self.residual_dropout));
        }
        (h, pre_activations)
    }

    pub fn forward<'g, F: Real>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        x: Var<'g, F>,
        t: &[f64],
        ctx: &mut ForwardCtx<F>,
    ) -> Var<'g, F> {
        let (b, k) = (x.shape()[0], x.shape()[1]);
        let (h, _) = self.trunk(g, store, x, t, ctx);
        let features = h.narrow(1, 1, k);
        let z = self.head_norm.forward(g, store, features).relu();
        self.head.forward(g, store, z).reshape(&[b, k])
    }
}
