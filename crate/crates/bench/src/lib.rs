//! Shared fixtures for the hot-path benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Deterministic flight-schema CSV lines for parser benchmarks.
pub fn sample_lines(count: usize, seed: u64) -> Vec<String> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            format!(
                "AA,2008,{},{},{},{}",
                rng.gen_range(1..=12),
                rng.gen_range(1..=28),
                rng.gen_range(-20..=180),
                rng.gen_range(-30..=180)
            )
        })
        .collect()
}

/// Deterministic payload bytes for codec and sealing benchmarks.
pub fn sample_payload(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen()).collect()
}
