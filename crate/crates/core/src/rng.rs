//! Seeded pseudo-random generators.
//!
//! Two tiny generators are hand-rolled instead of pulling in `rand` so
//! that every random draw in the pipeline is bit-reproducible across
//! platforms and documented down to the recurrence:
//!
//! * [`SplitMix64`] — `state += 0x9e3779b97f4a7c15`, output is the
//!   finalized mix of the new state (Steele, Lea & Flood 2014). Used for
//!   parameter init, masking, and shuffling. Cheap to re-seed, which lets
//!   per-step randomness be derived from `(seed, purpose, counters)` so
//!   resumed runs draw the same streams as uninterrupted ones.
//! * [`Mcg64`] — the 64-bit multiplicative congruential generator
//!   `state *= 0xd1342543de82ef95 (mod 2^64)` with the seed forced odd;
//!   floats take the high 53 bits. Drives synthetic scene generation.

/// SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Seed derived from a base seed plus distinguishing words, so
    /// independent streams (init, masking, shuffling, ...) never collide.
    pub fn derived(seed: u64, words: &[u64]) -> Self {
        let mut s = SplitMix64::new(seed);
        let mut h = s.next_u64();
        for &w in words {
            let mut m = SplitMix64::new(h ^ w);
            h = m.next_u64();
        }
        SplitMix64::new(h)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is < 2^-40 for the sizes used here (patch grids,
        // tile counts); acceptable and keeps the draw a single call.
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Truncated normal: std-normal draws with |z| > 2 rejected, scaled by `std`.
    pub fn next_trunc_normal(&mut self, std: f64) -> f64 {
        loop {
            let z = self.next_gaussian();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }
}

/// 64-bit multiplicative congruential generator (Lehmer, modulus 2^64).
///
/// Recurrence: `x_{n+1} = 0xd1342543de82ef95 * x_n mod 2^64`, seed forced
/// odd. Low bits are weak, so [`next_f64`](Mcg64::next_f64) uses the high
/// 53 bits only.
#[derive(Debug, Clone)]
pub struct Mcg64 {
    state: u64,
}

const MCG_MULTIPLIER: u64 = 0xd134_2543_de82_ef95;

impl Mcg64 {
    pub fn new(seed: u64) -> Self {
        Mcg64 { state: seed | 1 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(MCG_MULTIPLIER);
        self.state
    }

    /// Uniform in [0, 1) from the high 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
