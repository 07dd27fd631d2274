//! Seeded stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(master seed, replication, purpose/arm)`, so replications can run in any
//! order on any number of threads and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold several integers into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C909, |acc, &p| mix64(acc ^ mix64(p)))
}

/// Independent generator for `(master, replication, stream)`.
pub fn stream(master: u64, replication: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(master ^ mix64(replication)));
    rng.set_stream(stream);
    rng
}

/// Stream ids reserved for non-arm purposes. Arm streams use `0..K`.
pub(crate) mod purpose {
    pub const NOVEL: u64 = u64::MAX;
    pub const FOLDS: u64 = u64::MAX - 2;
    pub const CENTERS: u64 = u64::MAX - 3;
    pub const PAIRING: u64 = u64::MAX - 4;
}
