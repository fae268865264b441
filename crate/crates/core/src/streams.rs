//! Reproducible random streams.
//!
//! Every random draw comes from a ChaCha8 generator whose 256-bit key is
//! expanded from the master seed (`ChaCha8Rng::seed_from_u64`) and whose
//! 64-bit stream id is
//!
//! ```text
//! stream = mix(mix(mix(fnv1a64(tag)) ^ replicate) ^ node)
//! ```
//!
//! with `mix` the SplitMix64 finaliser. `tag` names the consumer (a CLI
//! subcommand or a verification check), `replicate` the replicate index and
//! `node` a sub-stream inside one replicate. Streams with different keys are
//! independent, so replicates can run in any order or in parallel and be
//! merged by index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a hash of a tag.
pub fn fnv1a64(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_id(tag: &str, replicate: u64, node: u64) -> u64 {
    mix(mix(mix(fnv1a64(tag)) ^ replicate) ^ node)
}

/// Independent generator for `(master seed, tag, replicate, node)`.
pub fn stream(master: u64, tag: &str, replicate: u64, node: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(tag, replicate, node));
    rng
}
