//! Seeded selection of in-context examples.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`. Bounded draws use rejection sampling on raw
//! `u64` output and the selection is a partial Fisher-Yates shuffle, both
//! implemented here so the draw sequence for a given seed does not depend on
//! the version of any distribution crate.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::schema::{Dataset, LabeledExample};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("requested {k} examples from a dataset of {available}")]
    KTooLarge { k: usize, available: usize },
}

/// Portable seeded generator used across the harness.
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_bytes(seed: [u8; 32]) -> Self {
        Self(ChaCha8Rng::from_seed(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `0..bound`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        // Largest multiple of `bound` representable; values at or above it are rejected.
        let zone = u64::MAX - (u64::MAX - bound + 1) % bound;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % bound;
            }
        }
    }

    /// Uniform real in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Indices of `k` distinct positions out of `n`, in draw order.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>, SampleError> {
    if k > n {
        return Err(SampleError::KTooLarge { k, available: n });
    }
    let mut rng = SeededRng::new(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below((n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    Ok(pool)
}

/// Draws `k` examples without replacement. The returned order is the draw order.
pub fn sample_in_context(
    dataset: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>, SampleError> {
    Ok(sample_indices(dataset.len(), k, seed)?
        .into_iter()
        .map(|i| dataset.examples[i].clone())
        .collect())
}
