//! Deterministic stream derivation.
//!
//! Every random quantity in an episode is drawn from a ChaCha stream keyed by
//! `(base seed, purpose, indices...)`, so results never depend on evaluation
//! order or on how many threads ran the experiment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Orders = 1,
    Prices = 2,
    Assignment = 3,
    Training = 4,
    Clustering = 5,
    Policy = 6,
    Thompson = 7,
    Synthetic = 8,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with an ordered list of indices into a single 64-bit key.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(seed: u64, purpose: Purpose, parts: &[u64]) -> ChaCha8Rng {
    let mut all = Vec::with_capacity(parts.len() + 1);
    all.push(purpose as u64);
    all.extend_from_slice(parts);
    ChaCha8Rng::seed_from_u64(mix(seed, &all))
}
