//! Deterministic counter-based randomness.
//!
//! Every stochastic routine in this crate draws from [`Rng`], a SplitMix64
//! stream: the state advances by the 64-bit golden-ratio constant and each
//! output is the Stafford "mix13" finalizer of the state.  The generator is
//! pinned here on purpose: artifacts must be bit-reproducible across
//! machines, thread counts, and library upgrades, so no external RNG crate
//! is involved.
//!
//! Sub-streams (sampling shards, experiment stages) are derived with
//! [`derive_stream`], which mixes a label into the seed through the same
//! finalizer.  Derived streams are therefore pure functions of
//! `(seed, label)` and never depend on draw order elsewhere.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer (Stafford mix13).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Derive an independent stream seed from a base seed and a label.
#[inline]
pub fn derive_stream(seed: u64, label: u64) -> u64 {
    mix64(seed ^ mix64(label.wrapping_mul(GOLDEN).wrapping_add(0x1F12_3BB5)))
}

#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}
