//! Deterministic named substreams derived from one master seed.
//!
//! Every source of randomness in a run (init, loss batches, conditioning
//! draws, validation set, SDE paths, ...) pulls from its own substream, so
//! changing how one component consumes randomness leaves the others untouched
//! and paired comparisons across backends see identical draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut h: u64, byte: u8) -> u64 {
    // FNV-1a step followed by a splitmix-style finalizer on read-out.
    h ^= byte as u64;
    h.wrapping_mul(0x100000001b3)
}

fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// RNG for the substream `name` under `master`.
pub fn substream(master: u64, name: &str) -> ChaCha8Rng {
    substream_indexed(master, name, 0)
}

/// RNG for the `index`-th member of a substream family (replicates, seeds).
pub fn substream_indexed(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut h = 0xcbf29ce484222325u64 ^ master;
    for b in name.bytes() {
        h = mix(h, b);
    }
    for b in index.to_le_bytes() {
        h = mix(h, b);
    }
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_mut(8).enumerate() {
        let salt = (i as u64).wrapping_mul(0x9e3779b97f4a7c15);
        chunk.copy_from_slice(&finalize(h.wrapping_add(salt)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
