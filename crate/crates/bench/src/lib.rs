//! Criterion benchmarks for the denoisers, training and the sampler; see `benches/`.
//!
//! Run with `cargo bench -p tabimpute-bench`.

use tabimpute::{sample_gaussian, Architecture, Denoiser, DenoiserConfig, Rng, Tensor};

/// Default-width denoiser for `k` features.
pub fn model(arch: Architecture, k: usize) -> Denoiser {
    let mut c = DenoiserConfig::new(arch, k);
    if arch == Architecture::Transformer {
        c.embed_dim = 64;
    }
    Denoiser::new(c, 0).expect("valid config")
}

/// Rows of standard normal data in `[0, 1]`-ish range.
pub fn table(rows: usize, k: usize, seed: u64) -> Tensor {
    sample_gaussian::<f64>(&mut Rng::new(seed), &[rows, k]).map(|v| 0.5 + 0.15 * v)
}
