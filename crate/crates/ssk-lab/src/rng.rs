//! Seed handling.
//!
//! Every random object is drawn from its own ChaCha8 stream.  The 64-bit key
//! is `mix64(seed)`; the stream id names what is being drawn, so the matrix and
//! the field vector of one replicate never share bits, and replicate `i` of a
//! run with base seed `b` uses seed `replicate_seed(b, i)`.  Nothing depends
//! on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids.  Keep these stable: changing one changes every sample.
pub mod stream {
    pub const MATRIX: u64 = 1;
    pub const FIELD: u64 = 2;
    pub const AUX_NORMALS: u64 = 3;
    pub const TRIDIAG: u64 = 4;
    pub const ORACLE: u64 = 5;
    pub const REFERENCE: u64 = 6;
}

/// SplitMix64 finalizer; a bijection on u64 with full avalanche.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of replicate `index` in a run with base seed `base`.
pub fn replicate_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Independent generator for (seed, stream).
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&mix64(seed).to_le_bytes());
    key[8..16].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_id);
    rng
}
