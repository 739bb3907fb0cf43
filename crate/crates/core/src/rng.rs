//! Seed derivation for reproducible Monte Carlo streams.
//!
//! All randomness comes from `ChaCha8Rng`, which produces the same stream on
//! every platform. Replication `r` of an experiment cell labelled `c` under
//! master seed `m` is seeded with
//!
//! ```text
//! seed = splitmix64(splitmix64(m ^ fnv1a64(c)) ^ r)
//! ```
//!
//! so cells are independent of their position in a grid and adding cells
//! never perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// One step of the SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn cell_seed(master: u64, cell: &str) -> u64 {
    splitmix64(master ^ fnv1a64(cell.as_bytes()))
}

pub fn replication_seed(master: u64, cell: &str, rep: u64) -> u64 {
    splitmix64(cell_seed(master, cell) ^ rep)
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
