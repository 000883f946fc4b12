//! Seeded, platform-independent randomness.
//!
//! The generator is xoshiro256** seeded through SplitMix64. Uniform doubles
//! take the top 53 bits of a draw; Gaussians use the Box–Muller transform and
//! cache the second value of each pair. Every step is specified bit for bit so
//! the same seed reproduces the same stream in any language.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256StarStar,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256StarStar::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seed for an independent child stream (per trajectory, per node, ...).
    /// Depends only on the parent seed and `stream`, never on the parent state.
    pub fn derive_seed(seed: u64, stream: u64) -> u64 {
        splitmix64(seed ^ splitmix64(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    pub fn derive(&self, stream: u64) -> Rng {
        Rng::new(Self::derive_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift on the top 32 bits; bias is below 2^-32 for our sizes.
        (((self.next_u64() >> 32) * n as u64) >> 32) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `dim` i.i.d. draws from N(0, sigma²). The stream advances by `dim` normals
/// regardless of `sigma`, so zero-noise runs stay aligned with noisy ones.
pub fn gaussian_vector(rng: &mut Rng, dim: usize, sigma: f64) -> Vec<f64> {
    let draws: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    if sigma == 0.0 {
        return vec![0.0; dim];
    }
    draws.into_iter().map(|z| sigma * z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_gives_zero_vector() {
        let mut rng = Rng::new(3);
        assert_eq!(gaussian_vector(&mut rng, 3, 0.0), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn same_seed_same_draws() {
        let a = gaussian_vector(&mut Rng::new(42), 2, 1.0);
        let b = gaussian_vector(&mut Rng::new(42), 2, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, gaussian_vector(&mut Rng::new(43), 2, 1.0));
    }

    #[test]
    fn sample_sd_matches_sigma() {
        // SD estimator has standard error sigma / sqrt(2n) ~ 2.2e-4 at n = 1e5.
        let xs = gaussian_vector(&mut Rng::new(7), 100_000, 0.1);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.099..=0.101).contains(&sd), "sd = {sd}");
        assert!(mean.abs() < 3.0 * 0.1 / n.sqrt());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(0);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn below_covers_range() {
        let mut rng = Rng::new(11);
        let mut seen = [0usize; 5];
        for _ in 0..5000 {
            seen[rng.below(5)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800));
    }

    #[test]
    fn derived_streams_differ() {
        let root = Rng::new(5);
        let mut a = root.derive(0);
        let mut b = root.derive(1);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(Rng::derive_seed(5, 0), root.derive(0).seed());
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..50).collect();
        Rng::new(9).shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
