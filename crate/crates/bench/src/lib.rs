//! Fixtures shared by the benchmarks.

use vidref_core::eval::synth::{render_instance, SynthConfig};
use vidref_core::{Image, Mask};

/// Deterministic pseudo-random values in `[-1, 1)`.
pub fn values(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

/// Two instances of the same synthetic class at `size`.
pub fn pair(size: usize) -> ((Image, Mask), (Image, Mask)) {
    let cfg = SynthConfig { size, ..Default::default() };
    (render_instance(&cfg, 0, 0), render_instance(&cfg, 0, 1))
}
