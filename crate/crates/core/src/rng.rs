//! Deterministic random number streams.
//!
//! Every source of randomness in a run is a [`ChaCha8Rng`] derived from the
//! master seed and a short text label ("world", "channel.e3", ...). Streams
//! with different labels are statistically independent, and a stream can be
//! re-created at any point from the same (seed, label) pair, which is what
//! makes common-random-number comparisons across schedulers and resumable
//! training possible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a hash, used to fold the label into the seed material.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// splitmix64 step, used to expand one 64-bit word into a full 256-bit key.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Creates the named random stream for a run.
///
/// The stream is a ChaCha8 generator keyed by a hash of the master seed and
/// the label, so distinct labels give unrelated sequences even for adjacent
/// seeds.
pub fn spawn_stream(master_seed: u64, label: &str) -> ChaCha8Rng {
    let mut state = master_seed ^ fnv1a(label.as_bytes());
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
