use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::nn::{film, Conv1d, ForwardCtx, GroupNorm, Init, Linear, MultiHeadAttention, TimeTokenizer};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Real;

use super::DenoiserConfig;

const KERNEL: usize = 3;
const MAX_GROUPS: usize = 8;

/// `Conv -> GN -> FiLM -> SiLU -> Conv -> GN -> SiLU` plus a skip path,
/// then `GN(x) + x`, then self-attention across feature positions.
#[derive(Clone, Debug)]
struct UBlock {
    tokenizer: Option<TimeTokenizer>,
    conv1: Conv1d,
    norm1: GroupNorm,
    conv2: Conv1d,
    norm2: GroupNorm,
    skip: Option<Conv1d>,
    res_norm: GroupNorm,
    attn: MultiHeadAttention,
    c_in: usize,
    c_out: usize,
}

impl UBlock {
    fn new<F: Real>(
        c: &DenoiserConfig,
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let init = Init::Uniform;
        let heads = crate::nn::layers_largest_divisor(c_out, c.heads);
        Ok(Self {
            tokenizer: if c.time_tokenizer {
                Some(TimeTokenizer::new(store, &format!("{name}.time"), c_out, rng)?)
            } else {
                None
            },
            conv1: Conv1d::new(store, &format!("{name}.conv1"), c_in, c_out, KERNEL, init, rng)?,
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), c_out, MAX_GROUPS)?,
            conv2: Conv1d::new(store, &format!("{name}.conv2"), c_out, c_out, KERNEL, init, rng)?,
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), c_out, MAX_GROUPS)?,
            skip: if c_in != c_out {
                Some(Conv1d::new(store, &format!("{name}.skip"), c_in, c_out, 1, init, rng)?)
            } else {
                None
            },
            res_norm: GroupNorm::new(store, &format!("{name}.res_norm"), c_out, MAX_GROUPS)?,
            attn: MultiHeadAttention::new(
                store,
                &format!("{name}.attn"),
                c_out,
                heads,
                c.attention_dropout,
                init,
                rng,
            )?,
            c_in,
            c_out,
        })
    }

    fn forward<'g, F: Real>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        x: Var<'g, F>,
        t: &[f64],
        dropout: f64,
        ctx: &mut ForwardCtx<F>,
    ) -> Var<'g, F> {
        debug_assert_eq!(x.shape()[1], self.c_in);
        let len = x.shape()[2];
        let mut h = self.norm1.forward(g, store, self.conv1.forward(g, store, x));
        if let Some(tok) = &self.tokenizer {
            let e = tok.forward(g, store, t);
            h = film(h, e.scale.expand(2, len), e.shift.expand(2, len));
        }
        let h = ctx.dropout(h.silu(), dropout);
        let h = self.norm2.forward(g, store, self.conv2.forward(g, store, h)).silu();
        let skip = match &self.skip {
            Some(conv) => conv.forward(g, store, x),
            None => x,
        };
        let h = h.add(skip);
        let h = self.res_norm.forward(g, store, h).add(h);
        let seq = h.permute(&[0, 2, 1]);
        self.attn.forward(g, store, seq, ctx).permute(&[0, 2, 1])
    }
}

/// U-Net over the feature axis treated as a one-channel sequence of length
/// `k`. Encoder block `i` maps `C[i-1] -> C[i]` (`C[0] = 1`), the bottleneck
/// keeps `C[n]`, and decoder block `i` maps the concatenation of the running
/// state and encoder output `i` (`2 C[i]` channels) to `C[i-1]`. A final
/// linear layer acts on the length-`k` output.
#[derive(Clone, Debug)]
pub struct UNet {
    down: Vec<UBlock>,
    bottleneck: UBlock,
    up: Vec<UBlock>,
    head: Linear,
    dropout: f64,
}

impl UNet {
    /// Smallest supported feature count (group norm over one channel needs two positions).
    pub const MIN_FEATURES: usize = 2;

    pub fn new<F: Real>(c: &DenoiserConfig, store: &mut ParamStore<F>, rng: &mut Rng) -> Result<Self> {
        let mut widths = vec![1];
        widths.extend(&c.channels);
        let n = c.channels.len();
        let down = (1..=n)
            .map(|i| UBlock::new(c, store, &format!("down.{}", i - 1), widths[i - 1], widths[i], rng))
            .collect::<Result<_>>()?;
        let bottleneck = UBlock::new(c, store, "mid", widths[n], widths[n], rng)?;
        let up = (1..=n)
            .rev()
            .map(|i| UBlock::new(c, store, &format!("up.{}", n - i), 2 * widths[i], widths[i - 1], rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            down,
            bottleneck,
            up,
            head: Linear::new(store, "head", c.k, c.k, Init::Uniform, rng)?,
            dropout: c.ffn_dropout,
        })
    }

    /// `(input, output)` channels of the decoder blocks, outermost last.
    pub fn decoder_channels(&self) -> Vec<(usize, usize)> {
        self.up.iter().map(|b| (b.c_in, b.c_out)).collect()
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
        let mut h = x.reshape(&[b, 1, k]);
        let mut skips = Vec::with_capacity(self.down.len());
        for blk in &self.down {
            h = blk.forward(g, store, h, t, self.dropout, ctx);
            skips.push(h);
        }
        h = self.bottleneck.forward(g, store, h, t, self.dropout, ctx);
        for blk in &self.up {
            let skip = skips.pop().expect("one skip per level");
            h = blk.forward(g, store, g.concat(&[h, skip], 1), t, self.dropout, ctx);
        }
        self.head.forward(g, store, h.reshape(&[b, k]))
    }
}
