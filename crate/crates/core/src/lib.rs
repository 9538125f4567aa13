//! Imputation of missing values in tabular data with denoising diffusion models.
//!
//! A denoiser is trained on complete rows to predict the noise added by the
//! forward process. At imputation time the reverse process runs over the
//! whole table while the observed entries are re-noised to the matching
//! level at every step, so the missing entries are generated conditioned on
//! the known ones.

pub mod autograd;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod sampling;
pub mod schedule;
pub mod tensor;
pub mod training;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use rng::{sample_gaussian, Rng};
pub use tensor::{Real, Tensor};

pub use baselines::BaselineKind;
pub use checkpoint::Checkpoint;
pub use data::{Dataset, Mask, MaskSpec, MinMaxScaler, Task};
pub use denoiser::{Architecture, Denoiser, DenoiserConfig};
pub use sampling::{impute, MaskedTable, SamplerOptions, Stepper};
pub use schedule::{DiffusionSchedule, SkipType, StepPlan};
pub use training::{train, TrainingConfig};

/// Crate version, written into output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
