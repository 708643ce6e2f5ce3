//! Deterministic, order-independent random substreams.
//!
//! Every random decision in the stack is drawn from a stream identified by a
//! base seed plus a path of integers (purpose tag, episode index, ...). Two
//! different paths give statistically independent streams, and a stream
//! does not depend on how many other streams were consumed before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a seed and a path into a single 64-bit key.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut state = seed;
    let mut key = splitmix64(&mut state);
    for &p in path {
        let mut s = key ^ p.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        key = splitmix64(&mut s);
    }
    key
}

pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    let mut state = derive_seed(seed, path);
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
