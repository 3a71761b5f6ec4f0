//! Seeded, portable randomness.
//!
//! Every stream is a ChaCha8 generator keyed from a 64-bit seed through
//! `SeedableRng::seed_from_u64` (a PCG32 expansion of the seed into the
//! 256-bit ChaCha key). ChaCha8 is a counter-based block cipher, so the
//! sequence depends only on the key and the block counter and is identical
//! on every platform. Independent sub-streams are obtained with
//! [`Rng::derive`], which mixes a label into the seed with SplitMix64.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh stream determined by `(self.seed, label)`; the state of `self`
    /// is not consulted, so derivation order does not matter.
    pub fn derive(&self, label: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(label)))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below called with n = 0");
        self.inner.random_range(0..n)
    }

    /// A raw 64-bit draw, for seeding sub-components.
    pub fn next_seed(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        // Fisher-Yates, written out so the draw sequence is pinned here.
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct elements of `items` chosen uniformly without replacement,
    /// in draw order. Returns all of them (shuffled) when `k >= len`.
    pub fn sample<T: Copy>(&mut self, items: &[T], k: usize) -> Vec<T> {
        let mut pool = items.to_vec();
        let k = k.min(pool.len());
        for i in 0..k {
            let j = i + self.below(pool.len() - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_give_equal_streams() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let mut a = Rng::new(1);
        let mut b = Rng::new(2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 2);
    }

    #[test]
    fn derive_is_independent_of_parent_state() {
        let a = Rng::new(9);
        let mut b = Rng::new(9);
        b.next_u64();
        assert_eq!(a.derive(3).next_u64(), b.derive(3).next_u64());
        assert_ne!(a.derive(3).next_u64(), a.derive(4).next_u64());
    }

    #[test]
    fn sample_is_distinct_and_bounded() {
        let mut rng = Rng::new(5);
        let items: Vec<usize> = (0..20).collect();
        let s = rng.sample(&items, 7);
        assert_eq!(s.len(), 7);
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 7);
        assert_eq!(rng.sample(&items, 50).len(), 20);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(0);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
