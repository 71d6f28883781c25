use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

/// Seeded xoshiro256** stream.
///
/// Child streams are derived with [`RngState::fork`]: the child's seed is the
/// parent's seed XOR a consumer tag, so every consumer gets an independent,
/// reproducible stream regardless of how much the parent has been used.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    seed: u64,
    gen: Xoshiro256StarStar,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            gen: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&self, tag: u64) -> RngState {
        RngState::new(self.seed ^ tag)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.gen.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn unit(&mut self) -> f64 {
        self.gen.random::<f64>()
    }

    /// Uniform on `[lo, hi]`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.gen.random_range(0..n)
    }

    /// `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}
