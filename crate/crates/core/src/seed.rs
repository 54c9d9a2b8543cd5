//! Stable seed derivation.
//!
//! Seeds are derived from a master seed and a list of labels with FNV-1a and
//! a SplitMix64 finalizer. Both are fixed algorithms, so a derived seed never
//! depends on the Rust version, the platform, or the order in which parallel
//! cells happen to be scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The PRNG used everywhere a seeded stream is needed.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit fingerprint of a byte stream.
pub fn fingerprint(chunks: impl IntoIterator<Item = impl AsRef<[u8]>>) -> u64 {
    let mut hash = FNV_OFFSET;
    for chunk in chunks {
        hash = fnv1a(hash, chunk.as_ref());
    }
    splitmix64(hash)
}

/// Derive a child seed from `master` and an ordered list of labels.
pub fn derive(master: u64, labels: &[&str]) -> u64 {
    let mut hash = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    for label in labels {
        // length prefix keeps ["ab", "c"] and ["a", "bc"] apart
        hash = fnv1a(hash, &(label.len() as u64).to_le_bytes());
        hash = fnv1a(hash, label.as_bytes());
    }
    splitmix64(hash)
}

/// Derive the `index`-th child seed of `seed`.
pub fn child(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}
