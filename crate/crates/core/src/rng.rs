//! Reproducible random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! root seed and a path of tags, e.g. `(seed, NOISE, iteration, term, point)`.
//! The key is derived by folding the tags through SplitMix64:
//!
//! ```text
//! h0 = splitmix(seed ^ 0x5851_f42d_4c95_7f2d)
//! h(i+1) = splitmix(h(i) ^ splitmix(tag_i + i))
//! key = [splitmix(h + 1), splitmix(h + 2), splitmix(h + 3), splitmix(h + 4)]
//! ```
//!
//! so a stream depends only on its own path. Work can be split across threads
//! in any order without changing what each point sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tags for the top level of a stream path.
pub mod domain {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const ADVERSARIAL: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const REFERENCE: u64 = 6;
    pub const STUDY: u64 = 7;
    pub const REPEAT: u64 = 8;
    pub const RESAMPLE: u64 = 9;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a root seed and a tag path into a single 64-bit value.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x5851_f42d_4c95_7f2d);
    for (i, &tag) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(tag.wrapping_add(i as u64)));
    }
    h
}

/// Generator for the substream `(seed, path…)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let h = derive(seed, path);
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(h.wrapping_add(i as u64 + 1)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
