//! Portable random streams.
//!
//! Every random draw in the crate (noise realizations, weight init,
//! minibatch order, reparameterization noise) comes from [`Stream`]: SplitMix64
//! for raw 64-bit words, the top 53 bits for uniforms, and the basic
//! Box–Muller transform for normals, both outputs of a pair consumed in order.
//! The whole construction is a few lines in any language, so generated
//! datasets are reproducible outside this crate.

use rand_core::RngCore;
use rand_xoshiro::SplitMix64;

#[derive(Clone, Debug)]
pub struct Stream {
    inner: SplitMix64,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        use rand_core::SeedableRng;
        Self {
            inner: SplitMix64::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Independent stream for a named purpose, e.g. `derive(seed, 3)` for
    /// ensemble member 3.
    pub fn derive(seed: u64, index: u64) -> Self {
        Self::new(derive_seed(seed, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Mixes `index` into `seed` so that neighbouring indices give unrelated
/// streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
