use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

use super::ForwardCtx;

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    #[default]
    Uniform,
    /// `N(0, 2/fan_in)` weights, zero biases.
    KaimingNormal,
}

impl Init {
    pub(crate) fn weight<F: Real>(self, rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<F> {
        let fan_in = fan_in as f64;
        match self {
            Init::Uniform => {
                let bound = 1.0 / fan_in.sqrt();
                Tensor::from_fn(shape, |_| F::lit(rng.uniform_range(-bound, bound)))
            }
            Init::KaimingNormal => {
                let std = (2.0 / fan_in).sqrt();
                Tensor::from_fn(shape, |_| F::lit(std * rng.normal()))
            }
        }
    }

    pub(crate) fn bias<F: Real>(self, rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<F> {
        match self {
            Init::Uniform => self.weight(rng, shape, fan_in),
            Init::KaimingNormal => Tensor::zeros(shape),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init.weight(rng, &[fan_in, fan_out], fan_in))?;
        let bias = store.add(format!("{name}.bias"), init.bias(rng, &[fan_out], fan_in))?;
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<'g, F: Real>(&self, g: &'g Graph<F>, store: &ParamStore<F>, x: Var<'g, F>) -> Var<'g, F> {
        x.linear(g.param(store, self.weight), Some(g.param(store, self.bias)))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.weight"), Tensor::ones(&[width]))?,
            beta: store.add(format!("{name}.bias"), Tensor::zeros(&[width]))?,
        })
    }

    pub fn forward<'g, F: Real>(&self, g: &'g Graph<F>, store: &ParamStore<F>, x: Var<'g, F>) -> Var<'g, F> {
        x.layer_norm(g.param(store, self.gamma), g.param(store, self.beta), F::lit(Self::EPS))
    }
}

/// Group normalization over `[batch, channels, length]`.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub groups: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl GroupNorm {
    pub const EPS: f64 = 1e-5;

    /// Uses the largest group count not above `max_groups` that divides `channels`.
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize, max_groups: usize) -> Result<Self> {
        let groups = largest_divisor_at_most(channels, max_groups);
        Ok(Self {
            groups,
            gamma: store.add(format!("{name}.weight"), Tensor::ones(&[channels]))?,
            beta: store.add(format!("{name}.bias"), Tensor::zeros(&[channels]))?,
        })
    }

    pub fn forward<'g, F: Real>(&self, g: &'g Graph<F>, store: &ParamStore<F>, x: Var<'g, F>) -> Var<'g, F> {
        x.group_norm(
            self.groups,
            g.param(store, self.gamma),
            g.param(store, self.beta),
            F::lit(Self::EPS),
        )
    }
}

pub(crate) fn largest_divisor_at_most(n: usize, cap: usize) -> usize {
    (1..=cap.min(n).max(1)).rev().find(|d| n % d == 0).unwrap_or(1)
}

/// Batch normalization over `[batch, features]` with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm1d {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.weight"), Tensor::ones(&[width]))?,
            beta: store.add(format!("{name}.bias"), Tensor::zeros(&[width]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[width]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[width]))?,
        })
    }

    /// Training mode normalizes with batch statistics and queues the running
    /// average update (unbiased variance) on `ctx`; it needs at least two rows.
    pub fn forward<'g, F: Real>(
        &self,
        g: &'g Graph<F>,
        store: &ParamStore<F>,
        x: Var<'g, F>,
        ctx: &mut ForwardCtx<F>,
    ) -> Result<Var<'g, F>> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let eps = F::lit(Self::EPS);
        if !ctx.is_train() {
            return Ok(x.batch_norm_eval(
                store.value(self.running_mean),
                store.value(self.running_var),
                gamma,
                beta,
                eps,
            ));
        }
        let n = x.shape()[0];
        if n < 2 {
            return Err(Error::InvalidShape {
                shape: x.shape(),
                reason: "batch norm in training mode needs at least two rows".into(),
            });
        }
        let (y, mean, var) = x.batch_norm_train(gamma, beta, eps);
        let m = F::lit(Self::MOMENTUM);
        let unbias = F::lit(n as f64 / (n - 1) as f64);
        let blend = |old: &Tensor<F>, new: &Tensor<F>, s: F| {
            old.zip_map(new, "running stats", |o, v| (F::one() - m) * o + m * v * s)
        };
        ctx.queue_update(self.running_mean, blend(store.value(self.running_mean), &mean, F::one())?);
        ctx.queue_update(self.running_var, blend(store.value(self.running_var), &var, unbias)?);
        Ok(y)
    }
}

/// 1-D convolution, stride 1, "same" padding, weights `[out, in, kernel]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("conv kernel must be odd, got {kernel}")));
        }
        let fan_in = c_in * kernel;
        Ok(Self {
            weight: store.add(format!("{name}.weight"), init.weight(rng, &[c_out, c_in, kernel], fan_in))?,
            bias: store.add(format!("{name}.bias"), init.bias(rng, &[c_out], fan_in))?,
        })
    }

    pub fn forward<'g, F: Real>(&self, g: &'g Graph<F>, store: &ParamStore<F>, x: Var<'g, F>) -> Var<'g, F> {
        x.conv1d(g.param(store, self.weight), g.param(store, self.bias))
    }
}
