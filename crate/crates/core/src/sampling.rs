//! Imputation by reverse diffusion with the observed entries re-injected at
//! every step.

use crate::data::{Mask, MinMaxScaler};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng::{sample_gaussian, Rng};
use crate::schedule::{harmonization_plan, skip_seq, DiffusionSchedule, SkipType, StepPlan};
use crate::tensor::{Real, Tensor};

/// Anything that predicts the noise in `x` at (model-scale) time `t`.
pub trait NoisePredictor<F: Real> {
    /// Number of feature columns.
    fn features(&self) -> usize;

    fn predict_noise(&self, x: &Tensor<F>, t: &[f64]) -> Result<Tensor<F>>;
}

impl<F: Real> NoisePredictor<F> for Denoiser<F> {
    fn features(&self) -> usize {
        self.config().k
    }

    fn predict_noise(&self, x: &Tensor<F>, t: &[f64]) -> Result<Tensor<F>> {
        self.predict(x, t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerOptions {
    /// Length of the sampling schedule.
    pub t_sampling: usize,
    /// Length of the schedule the model was trained with; sampling step `t`
    /// is presented to the model as `t * t_training / t_sampling`.
    pub t_training: usize,
    /// Shortened sequence length; selects the DDIM update when set.
    pub tau: Option<usize>,
    pub skip_type: SkipType,
    pub eta: f64,
    pub jump_length: usize,
    pub jump_n_sample: usize,
    pub n_mask_seeds: usize,
    pub n_inferences: usize,
    pub seed: u64,
    /// Clamp the clean-data estimate implied by each noise prediction to
    /// `[lo, hi]` before stepping. `None` applies the updates unchanged.
    pub clip_x0: Option<(f64, f64)>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            t_sampling: 500,
            t_training: 1000,
            tau: None,
            skip_type: SkipType::Uniform,
            eta: 0.0,
            jump_length: 1,
            jump_n_sample: 1,
            n_mask_seeds: 5,
            n_inferences: 5,
            seed: 0,
            clip_x0: None,
        }
    }
}

impl SamplerOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.t_sampling < 1 || self.t_training < 1 {
            return bad("t_sampling and t_training must be at least 1".into());
        }
        if let Some(tau) = self.tau {
            if tau < 1 || tau > self.t_sampling {
                return bad(format!("tau = {tau} must be in 1..={}", self.t_sampling));
            }
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad(format!("eta = {} must be a non-negative number", self.eta));
        }
        if self.jump_length < 1 || self.jump_n_sample < 1 {
            return bad("jump_length and jump_n_sample must be at least 1".into());
        }
        if let Some((lo, hi)) = self.clip_x0 {
            if !(lo < hi) {
                return bad(format!("clip range [{lo}, {hi}] is empty"));
            }
        }
        if self.n_inferences < 1 || self.n_mask_seeds < 1 {
            return bad("n_inferences and n_mask_seeds must be at least 1".into());
        }
        Ok(())
    }

    /// Visiting order: the skip sequence when `tau` is set, else every step.
    pub fn plan(&self) -> Result<StepPlan> {
        let seq = match self.tau {
            Some(tau) => skip_seq(self.t_sampling, tau, self.skip_type)?,
            None => (0..self.t_sampling).collect(),
        };
        harmonization_plan(&seq, self.jump_length, self.jump_n_sample)
    }

    pub fn stepper(&self) -> Stepper {
        match self.tau {
            Some(_) => Stepper::Ddim { eta: self.eta },
            None => Stepper::Ddpm,
        }
    }

    fn model_time(&self, t: usize) -> f64 {
        t as f64 * self.t_training as f64 / self.t_sampling as f64
    }
}

/// Update used for the missing entries on a descending move.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stepper {
    /// Ancestral step; only valid between adjacent steps.
    Ddpm,
    Ddim { eta: f64 },
}

/// Observed values and the mask of which ones are known.
#[derive(Clone, Debug)]
pub struct MaskedTable<F: Real = f64> {
    /// Values at missing entries are placeholders and never read.
    pub x_obs: Tensor<F>,
    pub mask: Mask,
    /// Scaling that produced `x_obs`, if any.
    pub scaler: Option<MinMaxScaler>,
}

impl<F: Real> MaskedTable<F> {
    pub fn new(x_obs: Tensor<F>, mask: Mask) -> Result<Self> {
        if x_obs.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: x_obs.shape().to_vec(),
                reason: "observations must be [rows, k]".into(),
            });
        }
        mask.check_shape(x_obs.rows(), x_obs.cols())?;
        for (i, (&v, &known)) in x_obs.data().iter().zip(mask.known()).enumerate() {
            if known && !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "observed entry ({}, {}) is not finite",
                    i / x_obs.cols(),
                    i % x_obs.cols()
                )));
            }
        }
        Ok(Self { x_obs, mask, scaler: None })
    }

    pub fn with_scaler(mut self, scaler: MinMaxScaler) -> Self {
        self.scaler = Some(scaler);
        self
    }
}

fn same_shape<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Observed entries diffused to step `t - 1`:
/// `sqrt(ab_{t-1}) x0 + sqrt(1 - ab_{t-1}) eps`.
pub fn known_sample<F: Real>(sched: &DiffusionSchedule, x0: &Tensor<F>, t: usize, eps: &Tensor<F>) -> Result<Tensor<F>> {
    sched.check_step(t)?;
    noised(sched, x0, t - 1, eps)
}

/// `sqrt(ab_s) x0 + sqrt(1 - ab_s) eps` for `s in 0..=T`.
fn noised<F: Real>(sched: &DiffusionSchedule, x0: &Tensor<F>, s: usize, eps: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape("known_sample", x0, eps)?;
    let ab = sched.alpha_bar(s)?;
    let (a, b) = (F::lit(ab.sqrt()), F::lit((1.0 - ab).sqrt()));
    x0.zip_map(eps, "known_sample", |x, e| a * x + b * e)
}

/// Ancestral update
/// `(x_t - (1 - a_t) / sqrt(1 - ab_t) * eps_hat) / sqrt(a_t) + sigma_t * noise`,
/// with the noise term dropped at `t = 1`.
pub fn ddpm_step<F: Real>(
    sched: &DiffusionSchedule,
    x_t: &Tensor<F>,
    t: usize,
    eps_hat: &Tensor<F>,
    noise: &Tensor<F>,
) -> Result<Tensor<F>> {
    same_shape("ddpm_step", x_t, eps_hat)?;
    same_shape("ddpm_step", x_t, noise)?;
    let alpha = sched.alpha(t)?;
    let ab = sched.alpha_bar(t)?;
    let c_in = F::lit(1.0 / alpha.sqrt());
    let c_eps = F::lit((1.0 - alpha) / (1.0 - ab).sqrt());
    let sigma = F::lit(if t > 1 { sched.posterior_sigma(t)? } else { 0.0 });
    Ok(Tensor::from_fn(x_t.shape(), |i| {
        c_in * (x_t.data()[i] - c_eps * eps_hat.data()[i]) + sigma * noise.data()[i]
    }))
}

/// `known` where the mask is set, `unknown` elsewhere.
pub fn combine<F: Real>(known: &Tensor<F>, unknown: &Tensor<F>, mask: &Mask) -> Result<Tensor<F>> {
    same_shape("combine", known, unknown)?;
    mask.check_shape(known.rows(), known.cols())?;
    let m = mask.known();
    Ok(Tensor::from_fn(known.shape(), |i| if m[i] { known.data()[i] } else { unknown.data()[i] }))
}

/// One forward step from `t - 1` to `t`: `sqrt(a_t) x + sqrt(1 - a_t) eps`.
pub fn harmonize_back<F: Real>(sched: &DiffusionSchedule, x_prev: &Tensor<F>, t: usize, eps: &Tensor<F>) -> Result<Tensor<F>> {
    sched.check_step(t)?;
    renoise(sched, x_prev, t - 1, t, eps)
}

/// Forward diffusion from step `from` to a later step `to`, using the
/// retained fraction `ab_to / ab_from`.
pub fn renoise<F: Real>(sched: &DiffusionSchedule, x: &Tensor<F>, from: usize, to: usize, eps: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape("renoise", x, eps)?;
    if from >= to {
        return Err(Error::InvalidArgument(format!("renoise must move forward ({from} -> {to})")));
    }
    let keep = if to == from + 1 {
        sched.alpha(to)?
    } else {
        sched.alpha_bar(to)? / sched.alpha_bar(from)?
    };
    let (a, b) = (F::lit(keep.sqrt()), F::lit((1.0 - keep).sqrt()));
    x.zip_map(eps, "renoise", |x, e| a * x + b * e)
}

/// Implicit update from `t` to an earlier `prev_t`:
/// `sqrt(ab_prev) x0_hat + sqrt(1 - ab_prev - sigma^2) eps_hat + sigma noise`.
pub fn impute_ddim_step<F: Real>(
    sched: &DiffusionSchedule,
    x_t: &Tensor<F>,
    t: usize,
    prev_t: usize,
    eps_hat: &Tensor<F>,
    eta: f64,
    noise: &Tensor<F>,
) -> Result<Tensor<F>> {
    same_shape("impute_ddim_step", x_t, eps_hat)?;
    same_shape("impute_ddim_step", x_t, noise)?;
    let sigma = sched.ddim_sigma(t, prev_t, eta)?;
    let ab_t = sched.alpha_bar(t)?;
    let ab_prev = sched.alpha_bar(prev_t)?;
    let mut dir = 1.0 - ab_prev - sigma * sigma;
    if dir < 0.0 {
        if dir < -1e-12 {
            return Err(Error::InvalidArgument(format!(
                "eta = {eta} is too large between steps {t} and {prev_t}"
            )));
        }
        dir = 0.0;
    }
    let (s_t, s_1t) = (F::lit(ab_t.sqrt()), F::lit((1.0 - ab_t).sqrt()));
    let (s_prev, s_dir, sig) = (F::lit(ab_prev.sqrt()), F::lit(dir.sqrt()), F::lit(sigma));
    Ok(Tensor::from_fn(x_t.shape(), |i| {
        let e = eps_hat.data()[i];
        let x0 = (x_t.data()[i] - s_1t * e) / s_t;
        s_prev * x0 + s_dir * e + sig * noise.data()[i]
    }))
}

/// Noise prediction whose implied clean estimate
/// `(x_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t)` is clamped to `[lo, hi]`.
/// Feeding the result to [`ddpm_step`] or [`impute_ddim_step`] steps from the
/// clamped estimate.
pub fn clip_prediction<F: Real>(
    sched: &DiffusionSchedule,
    x_t: &Tensor<F>,
    t: usize,
    eps_hat: &Tensor<F>,
    (lo, hi): (f64, f64),
) -> Result<Tensor<F>> {
    same_shape("clip_prediction", x_t, eps_hat)?;
    let ab = sched.alpha_bar(t)?;
    sched.check_step(t)?;
    let (s, s1) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Tensor::from_fn(x_t.shape(), |i| {
        let (x, e) = (x_t.data()[i].as_f64(), eps_hat.data()[i].as_f64());
        let x0 = (x - s1 * e) / s;
        if x0 < lo || x0 > hi {
            F::lit((x - s * x0.clamp(lo, hi)) / s1)
        } else {
            eps_hat.data()[i]
        }
    }))
}

/// One move of the plan, reported to a trace callback after it is applied.
/// `from`/`to` are plan entries (internal indices, `-1` = clean data).
pub struct TraceStep<'a, F: Real> {
    pub from: i64,
    pub to: i64,
    pub state: &'a Tensor<F>,
}

fn external(plan_entry: i64) -> usize {
    (plan_entry + 1) as usize
}

fn check_inputs<F: Real>(
    model: &impl NoisePredictor<F>,
    table: &MaskedTable<F>,
    sched: &DiffusionSchedule,
    opts: &SamplerOptions,
) -> Result<()> {
    opts.validate()?;
    if sched.steps() != opts.t_sampling {
        return Err(Error::InvalidConfig(format!(
            "schedule has {} steps but t_sampling is {}",
            sched.steps(),
            opts.t_sampling
        )));
    }
    if table.x_obs.cols() != model.features() {
        return Err(Error::InvalidArgument(format!(
            "table has {} columns but the model expects {}",
            table.x_obs.cols(),
            model.features()
        )));
    }
    Ok(())
}

/// One imputation run drawing from `rng`, walking the plan of `opts` with
/// the given stepper.
///
/// Every descending move draws the noise for the known entries and then the
/// step noise (both `rows x k`, even where unused); every ascending move
/// draws one noise tensor. Known entries of the result are the observations.
pub fn impute_run<F: Real>(
    model: &impl NoisePredictor<F>,
    table: &MaskedTable<F>,
    sched: &DiffusionSchedule,
    opts: &SamplerOptions,
    stepper: Stepper,
    rng: &mut Rng,
    mut trace: Option<&mut dyn FnMut(TraceStep<'_, F>)>,
) -> Result<Tensor<F>> {
    check_inputs(model, table, sched, opts)?;
    let plan = opts.plan()?;
    let shape = table.x_obs.shape().to_vec();
    let rows = shape[0];
    let mut x: Tensor<F> = sample_gaussian(rng, &shape);
    for w in plan.ts.windows(2) {
        let (cur, next) = (w[0], w[1]);
        let t = external(cur);
        if next < cur {
            let prev = external(next);
            let eps_known: Tensor<F> = sample_gaussian(rng, &shape);
            let noise: Tensor<F> = sample_gaussian(rng, &shape);
            let known = noised(sched, &table.x_obs, prev, &eps_known)?;
            let mut eps_hat = model.predict_noise(&x, &vec![opts.model_time(t); rows])?;
            if let Some(range) = opts.clip_x0 {
                eps_hat = clip_prediction(sched, &x, t, &eps_hat, range)?;
            }
            let unknown = match stepper {
                Stepper::Ddpm if prev + 1 == t => ddpm_step(sched, &x, t, &eps_hat, &noise)?,
                Stepper::Ddpm => {
                    return Err(Error::InvalidConfig(format!(
                        "the ancestral update cannot skip from step {t} to {prev}"
                    )))
                }
                Stepper::Ddim { eta } => impute_ddim_step(sched, &x, t, prev, &eps_hat, eta, &noise)?,
            };
            x = combine(&known, &unknown, &table.mask)?;
        } else {
            let eps: Tensor<F> = sample_gaussian(rng, &shape);
            x = renoise(sched, &x, t, external(next), &eps)?;
        }
        if let Some(f) = trace.as_mut() {
            f(TraceStep { from: cur, to: next, state: &x });
        }
    }
    x.ensure_finite("sampler")?;
    combine(&table.x_obs, &x, &table.mask)
}

/// Run number `index` of the ensemble, using stream `(opts.seed, index)`.
pub fn impute_single<F: Real>(
    model: &impl NoisePredictor<F>,
    table: &MaskedTable<F>,
    sched: &DiffusionSchedule,
    opts: &SamplerOptions,
    index: usize,
) -> Result<Tensor<F>> {
    let mut rng = Rng::stream(opts.seed, index as u64);
    impute_run(model, table, sched, opts, opts.stepper(), &mut rng, None)
}

/// Mean of `opts.n_inferences` runs, accumulated in run order as `x_i / n`.
/// Known entries of the result are the observations exactly.
pub fn impute<F: Real>(
    model: &impl NoisePredictor<F>,
    table: &MaskedTable<F>,
    sched: &DiffusionSchedule,
    opts: &SamplerOptions,
) -> Result<Tensor<F>> {
    check_inputs(model, table, sched, opts)?;
    let n = opts.n_inferences;
    let inv = F::lit(n as f64).recip();
    let mut acc = Tensor::zeros(table.x_obs.shape());
    for i in 0..n {
        let x = impute_single(model, table, sched, opts, i)?;
        for (a, &v) in acc.data_mut().iter_mut().zip(x.data()) {
            *a += v * inv;
        }
    }
    combine(&table.x_obs, &acc, &table.mask)
}
