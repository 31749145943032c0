//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed off a single master seed through
//! these helpers, so that independent stages (world generation, shuffling,
//! negative sampling, evaluation subsampling, parallel sweep points) never
//! share a stream and never depend on execution order or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Finalizer from splitmix64; a bijective avalanche mix on 64 bits.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for the numbered sub-stream `index`.
pub fn derive(master: u64, index: u64) -> u64 {
    mix(master ^ mix(index.wrapping_add(1)))
}

/// Derives an independent seed for a named sub-stream.
///
/// The tag is folded in with FNV-1a so call sites can use readable labels
/// ("shuffle", "negatives") instead of magic stream numbers.
pub fn derive_tagged(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(master ^ h)
}

/// Seeded generator for the numbered sub-stream.
pub fn rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, index))
}

/// Seeded generator for the named sub-stream.
pub fn rng_tagged(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_tagged(master, tag))
}
