pub mod ablate;
pub mod benchmark;
pub mod impute;
pub mod train;

use std::path::PathBuf;

use clap::Args;

use crate::config::Settings;
use crate::error::CliResult;

/// Flags every command accepts.
#[derive(Args, Debug, Clone, Default)]
pub struct CommonFlags {
    /// Config file with `[command]` sections of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonFlags {
    pub fn apply(&self, s: &mut Settings) -> CliResult<()> {
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        s.set_opt("seed", self.seed);
        Ok(())
    }
}

/// Sampler flags shared by impute, benchmark and ablate.
#[derive(Args, Debug, Clone, Default)]
pub struct SamplerFlags {
    /// Length of the sampling schedule.
    #[arg(long)]
    pub t_sampling: Option<usize>,
    /// Length of the shortened step sequence (enables the DDIM update).
    #[arg(long)]
    pub tau: Option<usize>,
    /// Spacing of the shortened sequence: uniform or quad.
    #[arg(long)]
    pub skip_type: Option<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub jump_length: Option<usize>,
    #[arg(long)]
    pub jump_n_sample: Option<usize>,
    #[arg(long)]
    pub n_inferences: Option<usize>,
    /// Clamp predicted clean values to LO:HI in model space.
    #[arg(long, allow_hyphen_values = true)]
    pub clip: Option<String>,
}

impl SamplerFlags {
    pub fn apply(&self, s: &mut Settings) {
        s.set_opt("t_sampling", self.t_sampling);
        s.set_opt("tau", self.tau);
        s.set_opt("skip_type", self.skip_type.as_ref());
        s.set_opt("eta", self.eta);
        s.set_opt("jump_length", self.jump_length);
        s.set_opt("jump_n_sample", self.jump_n_sample);
        s.set_opt("n_inferences", self.n_inferences);
        s.set_opt("clip", self.clip.as_ref());
    }
}

/// `path.display()` for settings values.
pub fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}
