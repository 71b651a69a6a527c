//! Counter-based deterministic random stream.
//!
//! Every draw is a pure function of `(seed, counter)`, so replaying a stream
//! from a saved `(seed, counter)` pair reproduces the exact same values on
//! any platform and under any iteration order. Derived substreams let
//! independent consumers (per-domain generation, splits, projections) pull
//! from disjoint streams without coordinating counters.

use alloc::vec;

use crate::tensor::Tensor2;

const PHI64: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Deterministic stream of random values addressed by `(seed, counter)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    /// Stream seeded by `seed`, counter at zero.
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    /// Restore a stream from a saved `(seed, counter)` pair.
    pub fn from_parts(seed: u64, counter: u64) -> Self {
        RngStream { seed, counter }
    }

    /// The `(seed, counter)` pair identifying the stream position.
    pub fn parts(&self) -> (u64, u64) {
        (self.seed, self.counter)
    }

    /// Independent stream derived from this stream's seed and a tag.
    /// Does not consume from or depend on the current counter.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream {
            seed: mix(self.seed ^ tag.wrapping_mul(PHI64) ^ 0x5851_F42D_4C95_7F2D),
            counter: 0,
        }
    }

    /// Next raw 64-bit value.
    pub fn next_u64(&mut self) -> u64 {
        let x = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed ^ x.wrapping_mul(PHI64))
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn next_unit(&mut self) -> f64 {
        (((self.next_u64() >> 11) as f64) + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform draw in [-bound, bound].
    pub fn next_symmetric(&mut self, bound: f64) -> f64 {
        (2.0 * self.next_unit() - 1.0) * bound
    }

    /// Uniform index in [0, n). `n` must be positive.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal draw (Box-Muller, cosine branch; two counter steps).
    pub fn next_gauss(&mut self) -> f64 {
        let u1 = self.next_unit();
        let u2 = self.next_unit();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Fisher-Yates shuffle of a slice.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}

/// `rows x cols` tensor of i.i.d. standard normal draws from the stream.
pub fn gauss_sample(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor2 {
    let mut data = vec![0.0; rows * cols];
    for v in data.iter_mut() {
        *v = rng.next_gauss();
    }
    Tensor2::from_vec(rows, cols, data).expect("length matches by construction")
}
