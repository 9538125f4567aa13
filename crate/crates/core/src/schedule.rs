//! Noise schedules and the order in which the sampler visits time steps.
//!
//! # Indexing
//!
//! [`DiffusionSchedule`] accessors take the *external* time step
//! `t in 1..=T`; `t = 0` is accepted wherever a previous step is meant and
//! denotes clean data (`alpha_bar(0) == 1`). Sequences produced by
//! [`skip_seq`] and [`harmonization_plan`] hold *internal* indices
//! `0..T`, i.e. `t - 1`, and the plan ends with the sentinel `-1` (clean data).
//!
//! The DDIM quantities use the cumulative `alpha_bar` throughout.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Offset of the cosine schedule.
pub const COSINE_S: f64 = 0.008;
/// Upper bound applied to every beta.
pub const MAX_BETA: f64 = 0.999;

/// Per-step noise coefficients for `T` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_sigma: Vec<f64>,
}

impl DiffusionSchedule {
    /// Cosine schedule: `alpha_bar(t) = f(t) / f(0)` with
    /// `f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2)`, `s = 0.008`.
    ///
    /// Betas are clipped at 0.999 and `alpha_bar` is then recomputed as the
    /// running product of `1 - beta`, so the two always agree.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 1 {
            return Err(Error::InvalidConfig("schedule needs at least one step".into()));
        }
        let f = |t: usize| {
            let c = ((t as f64 / steps as f64 + COSINE_S) / (1.0 + COSINE_S) * FRAC_PI_2).cos();
            c * c
        };
        let f0 = f(0);
        let beta = (1..=steps)
            .map(|t| (1.0 - (f(t) / f0) / (f(t - 1) / f0)).min(MAX_BETA))
            .collect();
        Self::from_betas(beta)
    }

    /// Linear betas from `start` to `end` inclusive.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::InvalidConfig("schedule needs at least one step".into()));
        }
        let beta = (0..steps)
            .map(|i| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if let Some(b) = beta.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidConfig(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let posterior_sigma = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                ((1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]).sqrt()
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            posterior_sigma,
        })
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// Errors unless `1 <= t <= T`.
    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimeStepOutOfRange {
                t: t as i64,
                lo: 1,
                hi: self.steps() as i64,
            });
        }
        Ok(())
    }

    fn check_prev(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::TimeStepOutOfRange {
                t: t as i64,
                lo: 0,
                hi: self.steps() as i64,
            });
        }
        Ok(())
    }

    /// `beta_t` for `t in 1..=T`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.beta[t - 1])
    }

    /// `alpha_t = 1 - beta_t` for `t in 1..=T`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha[t - 1])
    }

    /// `alpha_bar_t` for `t in 0..=T`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_prev(t)?;
        Ok(if t == 0 { 1.0 } else { self.alpha_bar[t - 1] })
    }

    /// `sqrt((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t)` for `t in 1..=T`.
    pub fn posterior_sigma(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.posterior_sigma[t - 1])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    /// `alpha_bar_1 ..= alpha_bar_T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// DDIM noise scale between `t` and an earlier step `prev_t` (`0 <= prev_t < t <= T`):
    /// `eta * sqrt((1 - ab_prev) / (1 - ab_t)) * sqrt(1 - ab_t / ab_prev)`.
    pub fn ddim_sigma(&self, t: usize, prev_t: usize, eta: f64) -> Result<f64> {
        self.check_step(t)?;
        if prev_t >= t {
            return Err(Error::TimeStepOutOfRange {
                t: prev_t as i64,
                lo: 0,
                hi: t as i64 - 1,
            });
        }
        if !(eta >= 0.0) {
            return Err(Error::InvalidArgument(format!("eta must be non-negative, got {eta}")));
        }
        if eta == 0.0 {
            return Ok(0.0);
        }
        let ab_t = self.alpha_bar[t - 1];
        let ab_prev = self.alpha_bar(prev_t)?;
        Ok(eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt())
    }
}

/// Spacing of a shortened step sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SkipType {
    #[default]
    Uniform,
    Quad,
}

impl FromStr for SkipType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "quad" => Ok(Self::Quad),
            other => Err(Error::InvalidArgument(format!("unknown skip type {other:?} (uniform, quad)"))),
        }
    }
}

impl fmt::Display for SkipType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Quad => "quad",
        })
    }
}

/// Ascending subset of the internal indices `0..num_timesteps`.
///
/// `Uniform` is `range(0, n, n / timesteps)`, which may hold more than
/// `timesteps` entries when `n` is not a multiple. `Quad` truncates the
/// squares of `timesteps` evenly spaced points in `[0, sqrt(0.8 n)]`;
/// repeated values near zero are dropped so the output stays strictly
/// ascending.
pub fn skip_seq(num_timesteps: usize, timesteps: usize, skip: SkipType) -> Result<Vec<usize>> {
    if timesteps < 1 || timesteps > num_timesteps {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= timesteps ({timesteps}) <= num_timesteps ({num_timesteps})"
        )));
    }
    Ok(match skip {
        SkipType::Uniform => (0..num_timesteps).step_by(num_timesteps / timesteps).collect(),
        SkipType::Quad => {
            let end = (num_timesteps as f64 * 0.8).sqrt();
            let mut seq: Vec<usize> = (0..timesteps)
                .map(|i| {
                    let x = if timesteps == 1 {
                        0.0
                    } else if i == timesteps - 1 {
                        end
                    } else {
                        i as f64 * (end / (timesteps - 1) as f64)
                    };
                    (x * x) as usize
                })
                .collect();
            seq.dedup();
            seq
        }
    })
}

/// Sequence of internal indices visited by the sampler, ending with `-1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepPlan {
    pub ts: Vec<i64>,
}

impl StepPlan {
    /// Number of moves between consecutive entries.
    pub fn transitions(&self) -> usize {
        self.ts.len().saturating_sub(1)
    }

    /// Number of moves that go back towards noise.
    pub fn ascents(&self) -> usize {
        self.ts.windows(2).filter(|w| w[1] > w[0]).count()
    }
}

/// Visiting order with resampling jumps.
///
/// Walks `seq` from the end; at every `jump_n_sample`-th position below
/// `len - jump_length` the walk climbs back `jump_length` positions and
/// descends again, `jump_n_sample - 1` times in total.
pub fn harmonization_plan(seq: &[usize], jump_length: usize, jump_n_sample: usize) -> Result<StepPlan> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument("empty step sequence".into()));
    }
    if seq.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("step sequence must be strictly ascending".into()));
    }
    if jump_length < 1 || jump_n_sample < 1 {
        return Err(Error::InvalidArgument(format!(
            "jump_length ({jump_length}) and jump_n_sample ({jump_n_sample}) must be >= 1"
        )));
    }
    let mut jumps = vec![0usize; seq.len()];
    if seq.len() > jump_length {
        for j in (0..seq.len() - jump_length).step_by(jump_n_sample) {
            jumps[j] = jump_n_sample - 1;
        }
    }
    let mut ts = Vec::new();
    let mut t = seq.len();
    while t >= 1 {
        t -= 1;
        ts.push(seq[t] as i64);
        if jumps[t] > 0 {
            jumps[t] -= 1;
            for _ in 0..jump_length {
                t += 1;
                ts.push(seq[t] as i64);
            }
        }
    }
    ts.push(-1);
    Ok(StepPlan { ts })
}
