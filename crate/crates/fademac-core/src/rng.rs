//! Counter-based random substreams.
//!
//! Every channel gain drawn by the simulator is addressed by the tuple
//! `(seed, realization, slot, user)` and produced by a stateless hash of
//! that tuple. Realization `k` is therefore reproducible in isolation and
//! evaluation order (or thread count) cannot perturb the stream.

/// SplitMix64 finalizer. Bijective on `u64` with full avalanche.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Uniform draw in `[0, 1)` for the substream keyed by
/// `(seed, realization, slot, user)`.
#[inline]
pub fn substream_uniform(seed: u64, realization: u64, slot: u64, user: u64) -> f64 {
    let mut x = mix64(seed ^ STREAM_SALT);
    x = mix64(x.wrapping_add(STREAM_SALT) ^ realization);
    x = mix64(x.wrapping_add(STREAM_SALT) ^ slot);
    x = mix64(x.wrapping_add(STREAM_SALT) ^ user);
    // Top 53 bits -> [0, 1) with the full f64 resolution.
    (x >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}
