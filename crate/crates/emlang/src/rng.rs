//! Deterministic, domain-separated random streams.
//!
//! Every stochastic step of a run draws from its own ChaCha stream derived
//! from `(master seed, domain label, index)`, so changing e.g. the number of
//! Gumbel draws in one epoch cannot shift the shuffle order of the next.

use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fmath;

/// FNV-1a over the label bytes; cheap and stable across platforms.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A ChaCha stream keyed by `(seed, domain, index)`.
pub fn subrng(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&label_hash(domain).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&0x9e3779b97f4a7c15u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Standard Gumbel(0, 1) sample, clamped away from the ±∞ tails.
pub fn sample_gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    -fmath::ln(-fmath::ln(u))
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// `count` distinct values from `0..n` excluding `excluded`, in draw order.
/// Uses a partial Fisher–Yates over the candidate pool.
pub fn sample_distinct_excluding(
    n: usize,
    excluded: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    assert!(excluded < n, "excluded index out of range");
    assert!(count <= n - 1, "cannot draw {count} distinct from {} candidates", n - 1);
    let mut pool: Vec<usize> = (0..n).filter(|&i| i != excluded).collect();
    for i in 0..count {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}
