//! Seed derivation.
//!
//! Every random quantity is drawn from a stream keyed by the run seed plus a
//! path of integer tags (stage, split, image index, ...). Streams never share
//! state, so results do not depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stage tags used as the first path element of a substream.
pub mod tag {
    pub const SCENE: u64 = 1;
    pub const COMPOSITE: u64 = 2;
    pub const DEGRADE: u64 = 3;
    pub const SPLIT: u64 = 4;
}

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Hashes a seed and a tag path into a single 64-bit key.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// A ChaCha stream for the given seed and tag path.
pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive(seed, path))
}

/// Counter-based uniform in [0, 1) for per-pixel draws.
#[inline]
pub fn unit_f64(key: u64, counter: u64) -> f64 {
    let bits = splitmix64(key ^ splitmix64(counter)) >> 11;
    bits as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Counter-based standard normal draw (Box-Muller on two counter uniforms).
#[inline]
pub fn normal_f64(key: u64, counter: u64) -> f64 {
    let u1 = 1.0 - unit_f64(key, counter.wrapping_mul(2));
    let u2 = unit_f64(key, counter.wrapping_mul(2).wrapping_add(1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
