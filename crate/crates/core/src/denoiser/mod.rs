//! Noise-prediction networks `f(x_t, t) -> eps_hat` for `[batch, k]` inputs.

mod mlp;
mod resnet;
mod transformer;
mod unet;

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{film, ForwardCtx, Init, Linear, TimeEmbedding};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub use mlp::Mlp;
pub use resnet::ResNet;
pub use transformer::Transformer;
pub use unet::UNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    Mlp,
    ResNet,
    Transformer,
    UNet,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::Mlp, Self::ResNet, Self::Transformer, Self::UNet];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mlp => "mlp",
            Self::ResNet => "resnet",
            Self::Transformer => "transformer",
            Self::UNet => "unet",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture {s:?} (mlp, resnet, transformer, unet)")))
    }
}

/// Hyper-parameters of a denoiser. Fields irrelevant to `arch` are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub arch: Architecture,
    /// Number of features.
    pub k: usize,
    pub blocks: usize,
    /// Hidden width of the MLP and ResNet (also their FiLM width).
    pub hidden: usize,
    /// Token width of the transformer.
    pub embed_dim: usize,
    pub heads: usize,
    pub attention_dropout: f64,
    pub ffn_dropout: f64,
    pub residual_dropout: f64,
    /// Transformer FFN hidden width is `ceil(ffn_factor * embed_dim)`.
    pub ffn_factor: f64,
    /// U-Net encoder channel ramp.
    pub channels: Vec<usize>,
    /// When false the network gets no time input and FiLM is the identity.
    pub time_tokenizer: bool,
}

impl DenoiserConfig {
    pub fn new(arch: Architecture, k: usize) -> Self {
        Self {
            arch,
            k,
            blocks: 3,
            hidden: 64,
            embed_dim: 192,
            heads: 8,
            attention_dropout: 0.2,
            ffn_dropout: 0.1,
            residual_dropout: 0.0,
            ffn_factor: 4.0 / 3.0,
            channels: vec![16, 32],
            time_tokenizer: true,
        }
    }

    /// Full-size channel ramp, 64 up to 512.
    pub fn wide_unet_channels() -> Vec<usize> {
        vec![64, 128, 256, 512]
    }

    pub fn init(&self) -> Init {
        match self.arch {
            Architecture::Transformer => Init::KaimingNormal,
            _ => Init::Uniform,
        }
    }

    pub fn ffn_hidden(&self) -> usize {
        (self.ffn_factor * self.embed_dim as f64 - 1e-9).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.blocks < 1 {
            return bad("blocks must be at least 1".into());
        }
        for (name, p) in [
            ("attention_dropout", self.attention_dropout),
            ("ffn_dropout", self.ffn_dropout),
            ("residual_dropout", self.residual_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        match self.arch {
            Architecture::Mlp | Architecture::ResNet if self.hidden < 1 => bad("hidden must be at least 1".into()),
            Architecture::Transformer => {
                if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
                    return bad(format!(
                        "embed_dim {} must be a positive multiple of heads {}",
                        self.embed_dim, self.heads
                    ));
                }
                if !(self.ffn_factor > 0.0) {
                    return bad("ffn_factor must be positive".into());
                }
                Ok(())
            }
            Architecture::UNet => {
                if self.k < UNet::MIN_FEATURES {
                    return bad(format!("unet needs at least {} features, got {}", UNet::MIN_FEATURES, self.k));
                }
                if self.channels.is_empty() || self.channels.contains(&0) {
                    return bad("unet channels must be a non-empty list of positive widths".into());
                }
                if self.heads == 0 {
                    return bad("heads must be positive".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Flat `key = value` form used by checkpoints.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let channels: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        vec![
            ("arch".into(), self.arch.to_string()),
            ("k".into(), self.k.to_string()),
            ("blocks".into(), self.blocks.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("attention_dropout".into(), format!("{:?}", self.attention_dropout)),
            ("ffn_dropout".into(), format!("{:?}", self.ffn_dropout)),
            ("residual_dropout".into(), format!("{:?}", self.residual_dropout)),
            ("ffn_factor".into(), format!("{:?}", self.ffn_factor)),
            ("channels".into(), channels.join(",")),
            ("time_tokenizer".into(), self.time_tokenizer.to_string()),
        ]
    }

    /// Inverse of [`DenoiserConfig::to_pairs`]; `get` returns the value for a key.
    pub fn from_pairs(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let need = |key: &str| get(key).ok_or_else(|| Error::Checkpoint(format!("missing key {key}")));
        fn num<T: FromStr>(key: &str, v: String) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value {v:?} for {key}")))
        }
        let arch: Architecture = need("arch")?.parse()?;
        let mut c = Self::new(arch, num("k", need("k")?)?);
        c.blocks = num("blocks", need("blocks")?)?;
        c.hidden = num("hidden", need("hidden")?)?;
        c.embed_dim = num("embed_dim", need("embed_dim")?)?;
        c.heads = num("heads", need("heads")?)?;
        c.attention_dropout = num("attention_dropout", need("attention_dropout")?)?;
        c.ffn_dropout = num("ffn_dropout", need("ffn_dropout")?)?;
        c.residual_dropout = num("residual_dropout", need("residual_dropout")?)?;
        c.ffn_factor = num("ffn_factor", need("ffn_factor")?)?;
        c.channels = need("channels")?
            .split(',')
            .map(|s| num("channels", s.to_string()))
            .collect::<Result<_>>()?;
        c.time_tokenizer = num("time_tokenizer", need("time_tokenizer")?)?;
        c.validate()?;
        Ok(c)
    }
}

/// `Dropout(ReLU(FiLM(Linear(x))))`; FiLM is skipped when no embedding is given.
#[derive(Clone, Debug)]
pub struct TimeStepMlp {
    pub linear: Linear,
    pub dropout: f64,
}

impl TimeStepMlp {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        dropout: f64,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(store, &format!("{name}.linear"), fan_in, fan_out, init, rng)?,
            dropout,
        })
    }

    pub fn forward<'g, F: Real>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        x: Var<'g, F>,
        emb: Option<&TimeEmbedding<'g, F>>,
        ctx: &mut ForwardCtx<F>,
    ) -> Var<'g, F> {
        let mut h = self.linear.forward(g, store, x);
        if let Some(e) = emb {
            h = film(h, e.scale, e.shift);
        }
        ctx.dropout(h.relu(), self.dropout)
    }
}

#[derive(Clone, Debug)]
enum Network {
    Mlp(Mlp),
    ResNet(ResNet),
    Transformer(Transformer),
    UNet(UNet),
}

/// A configured network together with its parameters.
#[derive(Clone, Debug)]
pub struct Denoiser<F: Real = f64> {
    config: DenoiserConfig,
    store: ParamStore<F>,
    net: Network,
}

impl<F: Real> Denoiser<F> {
    /// Builds the network with parameters initialized from `seed`.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let net = match config.arch {
            Architecture::Mlp => Network::Mlp(Mlp::new(&config, &mut store, &mut rng)?),
            Architecture::ResNet => Network::ResNet(ResNet::new(&config, &mut store, &mut rng)?),
            Architecture::Transformer => Network::Transformer(Transformer::new(&config, &mut store, &mut rng)?),
            Architecture::UNet => Network::UNet(UNet::new(&config, &mut store, &mut rng)?),
        };
        Ok(Self { config, store, net })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    /// Forward pass with this denoiser's own parameters.
    pub fn forward<'g>(
        &self,
        g: &'g Graph<F>,
        x: Var<'g, F>,
        t: &[f64],
        ctx: &mut ForwardCtx<F>,
    ) -> Result<Var<'g, F>> {
        self.forward_with(g, &self.store, x, t, ctx)
    }

    /// Forward pass with parameters taken from `store` (same layout as [`Denoiser::store`]).
    /// `x` is `[batch, k]`, `t` holds one (possibly fractional) time step per row.
    pub fn forward_with<'g>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        x: Var<'g, F>,
        t: &[f64],
        ctx: &mut ForwardCtx<F>,
    ) -> Result<Var<'g, F>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.config.k {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("denoiser expects [batch, {}]", self.config.k),
            });
        }
        if t.len() != shape[0] {
            return Err(Error::InvalidArgument(format!("{} time steps for {} rows", t.len(), shape[0])));
        }
        match &self.net {
            Network::Mlp(n) => Ok(n.forward(g, store, x, t, ctx)),
            Network::ResNet(n) => n.forward(g, store, x, t, ctx),
            Network::Transformer(n) => Ok(n.forward(g, store, x, t, ctx)),
            Network::UNet(n) => Ok(n.forward(g, store, x, t, ctx)),
        }
    }

    /// The U-Net, when that is the architecture.
    pub fn as_unet(&self) -> Option<&UNet> {
        match &self.net {
            Network::UNet(n) => Some(n),
            _ => None,
        }
    }

    #[cfg(test)]
    pub(crate) fn as_transformer(&self) -> Option<&Transformer> {
        match &self.net {
            Network::Transformer(n) => Some(n),
            _ => None,
        }
    }

    /// Evaluation-mode prediction without recording gradients.
    pub fn predict(&self, x: &Tensor<F>, t: &[f64]) -> Result<Tensor<F>> {
        let g = Graph::inference();
        let out = self.forward(&g, g.constant(x.clone()), t, &mut ForwardCtx::eval())?;
        g.check_finite()?;
        Ok(out.to_tensor())
    }
}
