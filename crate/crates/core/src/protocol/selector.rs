use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Secret per-frame branch choice, drawn from a ChaCha20 keystream.
///
/// With stream 0 the generator's output words are the RFC 8439 keystream
/// for the seed as key and an all-zero nonce, counter starting at 0.
#[derive(Debug, Clone)]
pub struct BranchSelector {
    rng: ChaCha20Rng,
}

impl BranchSelector {
    pub fn new(seed: [u8; 32]) -> Self {
        Self {
            rng: ChaCha20Rng::from_seed(seed),
        }
    }

    /// Seed expanded from a `u64`, for reproducible simulations.
    pub fn from_u64(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Seed drawn from operating system entropy.
    pub fn from_entropy() -> Self {
        Self {
            rng: ChaCha20Rng::from_os_rng(),
        }
    }

    /// Uniform draw from `1..=n` by rejection sampling on 32-bit words.
    ///
    /// # Panics
    /// If `n` is 0 or exceeds `u32::MAX`.
    pub fn select(&mut self, n: usize) -> usize {
        let n = u32::try_from(n)
            .ok()
            .filter(|&n| n > 0)
            .expect("branch count in 1..=u32::MAX");
        // 2^32 mod n: words below this would bias the low residues
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.rng.next_u32();
            if x >= threshold {
                return (x % n) as usize + 1;
            }
        }
    }

    pub(crate) fn next_word(&mut self) -> u32 {
        self.rng.next_u32()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn counting_seed() -> [u8; 32] {
        std::array::from_fn(|i| i as u8)
    }

    #[test]
    fn rfc8439_keystream() {
        // RFC 8439 A.1 test vector #1: zero key, zero nonce, block counter 0
        let mut s = BranchSelector::new([0; 32]);
        let expected = [0xade0b876u32, 0x903df1a0, 0xe56a5d40, 0x28bd8653];
        for e in expected {
            assert_eq!(s.next_word(), e);
        }
    }

    #[test]
    fn golden_draws() {
        let mut s = BranchSelector::new(counting_seed());
        let got: Vec<usize> = (0..16).map(|_| s.select(8)).collect();
        assert_eq!(got, [2, 2, 6, 1, 3, 5, 3, 1, 4, 3, 8, 3, 6, 2, 3, 1]);
        let mut s = BranchSelector::new(counting_seed());
        let got: Vec<usize> = (0..16).map(|_| s.select(6)).collect();
        assert_eq!(got, [2, 6, 6, 3, 3, 1, 5, 3, 4, 3, 2, 3, 2, 6, 3, 1]);
    }

    #[test]
    fn single_branch_always_one() {
        let mut s = BranchSelector::from_u64(3);
        assert!((0..100).all(|_| s.select(1) == 1));
    }

    #[test]
    fn chi_square_uniform() {
        let mut s = BranchSelector::from_u64(20_241_014);
        let mut counts = [0u64; 8];
        let draws = 1_000_000;
        for _ in 0..draws {
            counts[s.select(8) - 1] += 1;
        }
        let e = draws as f64 / 8.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new(7.0).unwrap().cdf(stat);
        assert!(p > 0.001, "chi2={stat} p={p}");
    }

    #[test]
    fn consecutive_draws_independent() {
        // joint distribution of (x_t, x_{t+1}) against the product of uniforms
        let mut s = BranchSelector::from_u64(99);
        let n = 8;
        let mut joint = vec![0u64; n * n];
        let mut prev = s.select(n);
        let pairs = 640_000;
        for _ in 0..pairs {
            let cur = s.select(n);
            joint[(prev - 1) * n + cur - 1] += 1;
            prev = cur;
        }
        let e = pairs as f64 / (n * n) as f64;
        let stat: f64 = joint.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new((n * n - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.001, "chi2={stat} p={p}");

        let mut s = BranchSelector::from_u64(100);
        let xs: Vec<f64> = (0..200_000).map(|_| s.select(n) as f64).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        let r = cov / var;
        // under independence r ~ N(0, 1/len); 3.29 sigma is two-sided p = 0.001
        assert!(
            r.abs() < 3.29 / (xs.len() as f64).sqrt(),
            "lag-1 autocorrelation {r}"
        );
    }

    #[test]
    fn rejection_removes_modulo_bias() {
        // n = 3 has 2^32 mod 3 = 1, so word 0 must be rejected
        let threshold = 3u32.wrapping_neg() % 3;
        assert_eq!(threshold, 1);
        assert_eq!(8u32.wrapping_neg() % 8, 0);
    }

    #[test]
    fn entropy_seeded_selectors_differ() {
        let mut a = BranchSelector::from_entropy();
        let mut b = BranchSelector::from_entropy();
        let xa: Vec<u32> = (0..8).map(|_| a.next_word()).collect();
        let xb: Vec<u32> = (0..8).map(|_| b.next_word()).collect();
        assert_ne!(xa, xb);
    }
}
