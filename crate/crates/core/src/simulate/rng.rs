//! Counter-based, splittable random streams.
//!
//! A stream is identified by `(seed, id)`. Its `n`-th output is a pure
//! function of `(seed, id, n)`, obtained by running a SplitMix64 finalizer
//! over the counter, so any substream can be materialized independently of
//! the order in which work is scheduled.

use rand_core::{impls, RngCore};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn combine(key: u64, x: u64) -> u64 {
    mix64(key ^ mix64(x.wrapping_add(GOLDEN)))
}

/// A reproducible random stream keyed by `(seed, id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    id: u64,
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64, id: u64) -> Self {
        Self {
            seed,
            id,
            key: combine(mix64(seed ^ GOLDEN), id),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Independent child stream labelled by `label`.
    pub fn split(&self, label: u64) -> Self {
        Self {
            seed: self.seed,
            id: combine(self.id, label),
            key: combine(self.key, label),
        }
    }

    /// Child stream addressed by a path of labels, e.g. `(generation, index)`.
    pub fn substream(&self, path: &[u64]) -> Self {
        path.iter().fold(*self, |s, &l| s.split(l))
    }

    /// A generator positioned at the start of this stream.
    pub fn rng(&self) -> CounterRng {
        CounterRng {
            key: self.key,
            counter: 0,
        }
    }
}

/// The generator behind an [`RngStream`]: output `n` is `mix(key + n·φ)`.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Index drawn with probability proportional to `weights` (non-negative, positive sum).
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        // rounding: fall back to the last atom with positive weight
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    /// Index drawn with probability proportional to integer `counts`.
    pub fn categorical_counts(&mut self, counts: &[u64], total: u64) -> usize {
        let mut u = self.next_u64() % total;
        for (i, &c) in counts.iter().enumerate() {
            if u < c {
                return i;
            }
            u -= c;
        }
        unreachable!("counts sum to total")
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        impls::fill_bytes_via_next(self, dest)
    }
}
