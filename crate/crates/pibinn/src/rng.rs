//! Counter-based splittable random numbers.
//!
//! Every draw is a pure function of (seed, stream, index), so generation is
//! order-independent: the same dataset spec produces bit-identical samples
//! regardless of how the work is split across workers.

const M1: u64 = 0xbf58_476d_1ce4_e5b9;
const M2: u64 = 0x94d0_49bb_1331_11eb;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_MIX: u64 = 0xd605_0b38_5c1e_95b3;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(M1);
    z = (z ^ (z >> 27)).wrapping_mul(M2);
    z ^ (z >> 31)
}

/// Stateless generator keyed by (seed, stream). Each output word is indexed
/// explicitly by the caller.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix(mix(seed.wrapping_add(GOLDEN)) ^ stream.wrapping_mul(STREAM_MIX));
        Self { key }
    }

    #[inline]
    pub fn word(&self, index: u64) -> u64 {
        mix(self.key ^ index.wrapping_mul(GOLDEN).wrapping_add(index >> 32))
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        ((self.word(index) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; consumes word indices 2i and 2i+1.
    #[inline]
    pub fn normal(&self, index: u64) -> f64 {
        let u1 = self.uniform(2 * index);
        let u2 = self.uniform(2 * index + 1);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
