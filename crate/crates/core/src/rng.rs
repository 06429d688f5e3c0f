//! Labelled, splittable random streams.
//!
//! Every stochastic operation draws from a [`RandomStream`] derived from the
//! run seed by a label path (`"day-3" / "demand"`). A child stream depends only
//! on its parent's key and its own label, never on how many values the parent
//! has produced, so adding or reordering draws in one module cannot shift the
//! draws seen by another.
//!
//! The generator itself is SplitMix64 over a per-stream key. It is not
//! cryptographically secure.

use rand_core::RngCore;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes; stable across platforms and releases.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic generator keyed by `(seed, label path)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomStream {
    key: u64,
    counter: u64,
}

impl RandomStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let key = mix64(mix64(seed ^ GOLDEN_GAMMA) ^ label_hash(label));
        Self { key, counter: 0 }
    }

    /// Child stream for `label`. Independent of the parent's position.
    pub fn derive(&self, label: &str) -> Self {
        debug_assert!(!label.is_empty(), "stream labels must be nonempty");
        let key = mix64(self.key.rotate_left(17) ^ label_hash(label).wrapping_mul(GOLDEN_GAMMA));
        Self { key, counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli draw. `p >= 1` is always true, `p <= 0` always false; one value
    /// is consumed either way.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is negligible for desk-scale n.
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        (RandomStream::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        RandomStream::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = RandomStream::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Cumulative-weight sampler over a fixed categorical distribution.
#[derive(Debug, Clone)]
pub struct Categorical {
    cumulative: Vec<f64>,
}

impl Categorical {
    /// Returns `None` when no weight is positive or any weight is negative or
    /// non-finite.
    pub fn new(weights: &[f64]) -> Option<Self> {
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(weights.len());
        for &w in weights {
            if !w.is_finite() || w < 0.0 {
                return None;
            }
            acc += w;
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return None;
        }
        Some(Self { cumulative })
    }

    pub fn sample(&self, rng: &mut RandomStream) -> usize {
        let total = *self.cumulative.last().expect("nonempty");
        let u = rng.next_f64() * total;
        // First index whose cumulative weight exceeds u; zero-weight entries
        // share their predecessor's cumulative value and are never selected.
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.cumulative.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }
}
