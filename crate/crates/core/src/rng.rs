//! Deterministic RNG streams.
//!
//! Every random draw in the toolkit comes from a stream derived from the
//! master seed, a purpose label, and an index. Streams are independent, so
//! chains can be simulated on any number of worker threads and still produce
//! bit-identical output, and analysis resampling never perturbs simulation
//! draws.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives per-purpose, per-index RNG streams from a single master seed.
#[derive(Debug, Clone, Copy)]
pub struct RngLedger {
    master: u64,
}

impl RngLedger {
    pub fn new(master: u64) -> Self {
        RngLedger { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Returns the stream keyed by `(master, purpose, index)`.
    ///
    /// The derivation is a pure function of its inputs and stable across
    /// platforms; no global state is involved.
    pub fn stream(&self, purpose: &str, index: u64) -> ChaCha8Rng {
        let mut state = self.master ^ 0x9e37_79b9_7f4a_7c15;
        state = splitmix64(&mut state);
        for chunk in purpose.as_bytes().chunks(8) {
            let mut word = [0u8; 8];
            word[..chunk.len()].copy_from_slice(chunk);
            state ^= u64::from_le_bytes(word);
            state = splitmix64(&mut state);
        }
        state ^= index;
        let mut seed = [0u8; 32];
        for slot in seed.chunks_exact_mut(8) {
            slot.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws an index from a categorical distribution given (normalized) weights.
///
/// Rounding can leave the cumulative sum marginally below one; the final
/// index absorbs the remainder.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    debug_assert!(!weights.is_empty());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Uniform draw from `0..n`.
pub fn sample_index<R: Rng + ?Sized>(n: usize, rng: &mut R) -> usize {
    debug_assert!(n > 0);
    rng.random_range(0..n)
}

/// Samples `k` distinct values from `0..n` (partial Fisher-Yates).
pub fn sample_distinct<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
