//! Reproducible sampling.
//!
//! The generator is SplitMix64 in its counter form: the `k`-th output
//! (`k` starting at 1) is `mix(seed + k * 0x9E3779B97F4A7C15)` with
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! all arithmetic wrapping mod 2^64. Each ability gets its own stream, keyed
//! by `seed ^ fnv1a64(ability name)`, so the sample for one ability does not
//! depend on which other abilities are selected.
//!
//! Bounded draws use rejection: for a bound `b`, outputs `x >= 2^64 - 1 - ((2^64 - 1) mod b)`
//! are discarded and `x mod b` is returned.
//!
//! Sampling `n` of `m` items is a partial Fisher–Yates shuffle over the items
//! in corpus order: for `i` in `0..n`, `j = i + bounded(m - i)`, swap `i`
//! and `j`; the first `n` items are the sample. Samples for smaller `n` are
//! prefixes of samples for larger `n` under the same key.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    seed: u64,
    counter: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { seed, counter: 0 }
    }

    /// Stream dedicated to one named key.
    pub fn for_key(seed: u64, key: &str) -> Self {
        Self::new(seed ^ fnv1a64(key.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform integer in `0..bound`.
    pub fn bounded(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let limit = u64::MAX - (u64::MAX % bound);
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % bound;
            }
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Draws `n` items without replacement by partial Fisher–Yates.
/// Panics if `n > items.len()`; callers validate first.
pub fn sample_without_replacement<T: Clone>(items: &[T], n: usize, rng: &mut SplitMix64) -> Vec<T> {
    assert!(n <= items.len());
    let mut pool = items.to_vec();
    let m = pool.len();
    for i in 0..n {
        let j = i + rng.bounded((m - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(n);
    pool
}
