//! Counter-based SplitMix64.
//!
//! Output `i` of a stream keyed by `k` is `mix(k + (i + 1)·γ)` with
//! `γ = 0x9E3779B97F4A7C15` and `mix` the SplitMix64 finalizer, so any
//! implementation with 64-bit wrapping arithmetic reproduces the same
//! initializations and data orders bit for bit.
//!
//! Derived quantities:
//! - uniform `[0, 1)`: `(x >> 11) · 2⁻⁵³`
//! - uniform `(0, 1]`: `((x >> 11) + 1) · 2⁻⁵³`
//! - normal: Box–Muller cosine branch, `√(−2 ln u₁) · cos(2π u₂)` with
//!   `u₁ ∈ (0, 1]`, `u₂ ∈ [0, 1)`; one normal per two outputs
//! - integer below `n`: high 64 bits of `x · n`
//! - shuffle: Fisher–Yates from the last index down

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent key from `seed` and a stream tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag.wrapping_add(GAMMA)))
}

/// Stream tags used across the crate.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const DATA_ORDER: u64 = 2;
    pub const REINIT: u64 = 3;
    pub const SYNTHETIC: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const ROUND: u64 = 6;
}

#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        CounterRng { key, counter: 0 }
    }

    /// Stream keyed by `derive(seed, tag)`.
    pub fn with_stream(seed: u64, tag: u64) -> Self {
        Self::new(derive(seed, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn uniform_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open_low();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
