//! Seeded, platform-independent random number generation.
//!
//! The generator is ChaCha8 from `rand_chacha`, whose output stream is fixed
//! by its seed on every platform. Child generators for parallel tasks are the
//! same seed with a different ChaCha stream id, so they never overlap and do
//! not depend on scheduling.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    /// Identifier recorded alongside experiment outputs.
    pub const ALGORITHM: &'static str = "chacha8/seed_from_u64";

    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Generator for an independent task: `seed` on ChaCha stream `stream`.
    pub fn child(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fisher–Yates shuffle driven by [`Rng::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// Draws `λ ~ Beta(alpha, alpha)`.
    ///
    /// For `alpha <= 1` this is Jöhnk's rejection method evaluated in log
    /// space, since `U^(1/alpha)` underflows for small `alpha`. For
    /// `alpha > 1` it is the ratio `X / (X + Y)` of two `Gamma(alpha, 1)`
    /// draws (Marsaglia–Tsang, via `rand_distr`).
    pub fn sample_beta(&mut self, alpha: f64) -> Result<f64> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(Error::invalid("alpha", format!("must be > 0, got {alpha}")));
        }
        if alpha <= 1.0 {
            loop {
                let u = self.uniform();
                let v = self.uniform();
                if u == 0.0 || v == 0.0 {
                    continue;
                }
                let log_x = u.ln() / alpha;
                let log_y = v.ln() / alpha;
                let log_sum = super::prob::log_sum_exp(&[log_x, log_y]);
                if log_sum <= 0.0 {
                    let lambda = (log_x - log_sum).exp();
                    return Ok(lambda.clamp(0.0, 1.0));
                }
            }
        } else {
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid("alpha", e.to_string()))?;
            loop {
                let x: f64 = gamma.sample(&mut self.inner);
                let y: f64 = gamma.sample(&mut self.inner);
                let s = x + y;
                if s > 0.0 {
                    return Ok((x / s).clamp(0.0, 1.0));
                }
            }
        }
    }
}
