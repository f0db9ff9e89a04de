//! Seeded random numbers for parameter init and dropout masks.
//!
//! ChaCha8 is counter-based, so identical seeds give identical streams on
//! every platform; that is what makes whole runs bitwise reproducible.

use rand_core::RngCore;

pub struct Rng {
    inner: rand_chacha::ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        use rand_core::SeedableRng;
        Self { inner: rand_chacha::ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1), using the top 53 bits for an exact dyadic value.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller; u is nudged away from zero so the
    /// logarithm stays finite.
    pub fn normal(&mut self) -> f64 {
        let u = (self.uniform()).max(f64::MIN_POSITIVE);
        let v = self.uniform();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }
}
