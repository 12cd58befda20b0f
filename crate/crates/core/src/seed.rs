//! Splitting one root seed into independent per-component streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(root, path...)`.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

/// Stream tags.
pub mod tags {
    pub const INPUT_ENCODER: u64 = 1;
    pub const GUIDE_ENCODER: u64 = 2;
    pub const DECODER: u64 = 3;
    pub const PATCH: u64 = 10;
    pub const NOISE: u64 = 11;
    pub const SHUFFLE: u64 = 12;
    pub const SYNTHETIC: u64 = 20;
    pub const EVAL_NOISE: u64 = 30;
}

/// Serializes a `u64` seed as the bit-identical `i64`, since TOML integers
/// are signed.
pub mod serde_seed {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(*seed as i64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        i64::deserialize(d).map(|v| v as u64)
    }
}
