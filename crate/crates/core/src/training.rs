//! Noise-prediction training on complete tables.

use crate::autograd::Graph;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::nn::ForwardCtx;
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::{sample_gaussian, Rng};
use crate::schedule::DiffusionSchedule;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Number of diffusion steps `T` used for training.
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Threshold of the smooth-L1 loss.
    pub beta_l1: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            steps: 1000,
            lr: 1e-3,
            weight_decay: 1e-5,
            beta_l1: 1.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.steps < 1 {
            return bad("steps (T) must be at least 1");
        }
        if !(self.beta_l1 > 0.0) {
            return bad("beta_l1 must be positive");
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr must be positive and weight_decay non-negative");
        }
        Ok(())
    }
}

/// Forward diffusion `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps` with one `t in 1..=T` per row.
pub fn q_sample<F: Real>(sched: &DiffusionSchedule, x0: &Tensor<F>, t: &[usize], eps: &Tensor<F>) -> Result<Tensor<F>> {
    if x0.shape() != eps.shape() {
        return Err(Error::shape("q_sample", x0.shape(), eps.shape()));
    }
    if x0.rank() != 2 || t.len() != x0.rows() {
        return Err(Error::InvalidArgument(format!(
            "q_sample needs [rows, k] data and one time step per row ({} given)",
            t.len()
        )));
    }
    let k = x0.cols();
    let mut out = Vec::with_capacity(x0.len());
    for (r, &ti) in t.iter().enumerate() {
        let ab = sched.alpha_bar(ti).and_then(|ab| sched.check_step(ti).map(|_| ab))?;
        let (a, b) = (F::lit(ab.sqrt()), F::lit((1.0 - ab).sqrt()));
        for c in 0..k {
            out.push(a * x0.data()[r * k + c] + b * eps.data()[r * k + c]);
        }
    }
    Tensor::new(x0.shape().to_vec(), out)
}

/// Details of one optimization step, passed to [`TrainObserver::on_batch`].
pub struct BatchInfo<'a> {
    pub epoch: usize,
    pub step: usize,
    pub t: &'a [usize],
    pub loss: f64,
}

/// Hooks into the training loop.
pub trait TrainObserver<F: Real> {
    fn on_batch(&mut self, _info: &BatchInfo<'_>) {}

    /// Called after every epoch (1-based) with the mean loss of that epoch.
    fn on_epoch(&mut self, _epoch: usize, _mean_loss: f64, _model: &Denoiser<F>) -> Result<()> {
        Ok(())
    }
}

impl<F: Real> TrainObserver<F> for () {}

/// Mean training loss per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossHistory {
    pub epoch_losses: Vec<f64>,
}

impl LossHistory {
    /// `epoch,mean_loss` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            s.push_str(&format!("{},{l:?}\n", i + 1));
        }
        s
    }
}

/// Trains `denoiser` to predict the noise of [`q_sample`] at uniformly drawn
/// time steps.
pub fn train<F: Real>(denoiser: &mut Denoiser<F>, data: &Tensor<F>, cfg: &TrainingConfig) -> Result<LossHistory> {
    train_with_observer(denoiser, data, cfg, &mut ())
}

/// [`train`] with hooks.
///
/// Rows are reshuffled every epoch; the final short batch is kept. For each
/// batch one time step per row is drawn, then the noise, from the run
/// generator; dropout masks come from an independent stream of the same seed.
pub fn train_with_observer<F: Real>(
    denoiser: &mut Denoiser<F>,
    data: &Tensor<F>,
    cfg: &TrainingConfig,
    observer: &mut impl TrainObserver<F>,
) -> Result<LossHistory> {
    cfg.validate()?;
    let k = denoiser.config().k;
    if data.rank() != 2 || data.cols() != k {
        return Err(Error::InvalidShape {
            shape: data.shape().to_vec(),
            reason: format!("training data must be [rows, {k}]"),
        });
    }
    data.ensure_finite("training data")?;
    let n = data.rows();
    if n < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{n} rows is fewer than the batch size {}",
            cfg.batch_size
        )));
    }
    let sched = DiffusionSchedule::cosine(cfg.steps)?;
    let mut rng = Rng::new(cfg.seed);
    let mut ctx = ForwardCtx::train(Rng::stream(cfg.seed, 1));
    let mut opt = AdamW::new(
        denoiser.store(),
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let beta = F::lit(cfg.beta_l1);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let order = rng.permutation(n);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut rows = Vec::with_capacity(chunk.len() * k);
            for &r in chunk {
                rows.extend_from_slice(data.row(r));
            }
            let x0 = Tensor::from_parts(vec![chunk.len(), k], rows);
            let t: Vec<usize> = (0..chunk.len()).map(|_| 1 + rng.below(cfg.steps as u64) as usize).collect();
            let eps: Tensor<F> = sample_gaussian(&mut rng, &[chunk.len(), k]);
            let xt = q_sample(&sched, &x0, &t, &eps)?;
            let tf: Vec<f64> = t.iter().map(|&v| v as f64).collect();
            let g = Graph::new();
            let pred = denoiser.forward(&g, g.constant(xt), &tf, &mut ctx)?;
            let loss_var = pred.smooth_l1(&eps, beta);
            let loss = loss_var.value().item().as_f64();
            step += 1;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, lr: cfg.lr, loss });
            }
            let grads = g.backward(loss_var)?;
            drop(g);
            let store = denoiser.store_mut();
            grads.accumulate_into(store);
            opt.step(store)?;
            for (id, value) in ctx.take_updates() {
                store.set_value(id, value)?;
            }
            total += loss * chunk.len() as f64;
            observer.on_batch(&BatchInfo {
                epoch,
                step,
                t: &t,
                loss,
            });
        }
        let mean = total / n as f64;
        history.push(mean);
        observer.on_epoch(epoch, mean, denoiser)?;
    }
    Ok(LossHistory { epoch_losses: history })
}
