//! Seed derivation for named random sub-streams.
//!
//! Every randomized stage (mixture init, noise injection, phantom jitter)
//! takes its own 64-bit seed. A front end that exposes a single seed can
//! derive one per stage so that adding a stage never shifts the stream
//! consumed by another.

/// Derives a child seed for a named sub-stream of `seed`.
///
/// Stable across platforms and releases: FNV-1a over the label folded
/// into the seed, then a splitmix64 finalizer.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stream.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
