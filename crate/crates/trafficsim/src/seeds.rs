//! Deterministic seed substreams. All randomness in the harness flows from
//! one root seed through labeled children, so artifacts are reproducible
//! regardless of thread scheduling or collection order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a. Not the std hasher, which may change across
/// releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Child seed for a named substream.
pub fn substream(root: u64, label: &str, index: u64) -> u64 {
    let mut bytes = Vec::with_capacity(label.len() + 16);
    bytes.extend_from_slice(&root.to_le_bytes());
    bytes.extend_from_slice(label.as_bytes());
    bytes.extend_from_slice(&index.to_le_bytes());
    fnv1a(&bytes)
}

/// Seeded generator for a named substream.
pub fn stream_rng(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(root, label, index))
}
