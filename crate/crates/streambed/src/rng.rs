//! Deterministic counter-based random number generation.
//!
//! Sampler state has to survive a checkpoint/resume cycle bit-for-bit, so the
//! generator is a pure function of `(seed, draw index)`: draw `i` hashes the
//! word `seed + (i + 1) * GAMMA` through the SplitMix64 finalizer. Restoring a
//! generator is therefore just storing the seed and how many draws were made —
//! there is no hidden state to serialize and no replay needed.

use serde::{Deserialize, Serialize};

/// Weyl-sequence increment used by SplitMix64 (odd, near 2^64 / phi).
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based PRNG: output `i` is `mix64(seed + (i + 1) * GAMMA)`.
///
/// Statistical quality is that of SplitMix64, which is more than adequate for
/// the acceptance-rate and slot-selection draws made here; it is not a
/// cryptographic generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterRng {
    seed: u64,
    calls: u64,
}

impl CounterRng {
    /// Creates a generator positioned before its first draw.
    pub fn new(seed: u64) -> Self {
        CounterRng { seed, calls: 0 }
    }

    /// Rebuilds the exact generator state recorded in a checkpoint.
    pub fn restore(seed: u64, calls: u64) -> Self {
        CounterRng { seed, calls }
    }

    /// Derives an independent stream seed from a base seed and a stream id.
    ///
    /// Used to give each reservoir, generator, and initializer its own
    /// deterministic stream without the streams overlapping.
    pub fn derive_seed(base: u64, stream: u64) -> u64 {
        mix64(base ^ mix64(stream.wrapping_mul(GAMMA).wrapping_add(GAMMA)))
    }

    /// Seed this generator was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of draws made so far (both integer and float draws count).
    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.calls += 1;
        mix64(self.seed.wrapping_add(self.calls.wrapping_mul(GAMMA)))
    }

    /// Uniform draw on the **open** interval (0, 1).
    ///
    /// Mapping: take the top 53 bits `b` of the raw output and return
    /// `(b + 0.5) * 2^-53`, i.e. the midpoint of each dyadic cell. The
    /// smallest value is `2^-54` and the largest `1 - 2^-54`, so exact 0.0
    /// and 1.0 can never occur. Several downstream formulas (`u^(-1/k)`,
    /// `ln u`) are singular at the endpoints and rely on this.
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer draw on `[0, n)`. `n` must be nonzero.
    ///
    /// Multiply-shift reduction; the bias is O(n / 2^64), far below anything
    /// the statistical tests here can resolve.
    pub fn next_index(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0, "next_index requires a nonempty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal draw via Box–Muller (consumes two uniform draws).
    ///
    /// The open-interval uniform keeps `ln u` finite.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// SplitMix64 finalizer: a fast 64-bit avalanche mix.
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
