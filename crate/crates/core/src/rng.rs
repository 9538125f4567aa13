//! Seeded randomness.
//!
//! The generator is ChaCha8 (`rand_chacha`), which produces the same stream
//! for a given seed on every platform. Uniforms use the top 53 bits of each
//! 64-bit word; normals come from the Box–Muller transform evaluated with the
//! pure-Rust `libm` routines so that the transcendental calls are
//! bit-identical across targets as well.
//!
//! Independent streams for parallel work (e.g. the inferences of an
//! ensemble) are derived with [`Rng::stream`], which selects a ChaCha stream
//! id under the same key.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Real, Tensor};

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, 0)
    }

    /// Stream `stream` under key `seed`. Distinct stream ids never overlap.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            inner,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform in `(0, 1]`.
    fn uniform_nonzero(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG_53
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_nonzero();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    /// Uniform integer in `[0, n)` without modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// A random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// Tensor of i.i.d. standard normal entries.
pub fn sample_gaussian<F: Real>(rng: &mut Rng, shape: &[usize]) -> Tensor<F> {
    assert!(!shape.is_empty(), "sample_gaussian needs a non-empty shape");
    Tensor::from_fn(shape, |_| F::lit(rng.normal()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reseeding_reproduces_the_stream() {
        let mut a = Rng::new(7);
        let x1: Tensor = sample_gaussian(&mut a, &[4]);
        let x2: Tensor = sample_gaussian(&mut a, &[4]);
        assert_ne!(x1, x2);
        let mut b = Rng::new(7);
        assert_eq!(x1, sample_gaussian(&mut b, &[4]));
        assert_eq!(x2, sample_gaussian(&mut b, &[4]));
    }

    #[test]
    fn shape_arithmetic() {
        let t: Tensor = sample_gaussian(&mut Rng::new(1), &[2, 3]);
        assert_eq!(t.len(), 6);
        assert_eq!(t.shape(), &[2, 3]);
    }

    #[test]
    fn gaussian_moments() {
        let t: Tensor = sample_gaussian(&mut Rng::new(3), &[100_000]);
        let mean = t.mean();
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn streams_are_distinct() {
        let mut a = Rng::stream(5, 0);
        let mut b = Rng::stream(5, 1);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn below_and_permutation() {
        let mut r = Rng::new(11);
        for _ in 0..1000 {
            assert!(r.below(7) < 7);
        }
        let mut p = r.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::new(0);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
