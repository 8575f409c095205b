//! Counter-based random streams.
//!
//! Every random draw in a simulation comes from a stream identified by
//! `(master seed, role, index)`, so results do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(master, role, index)`.
///
/// `role` separates kinds of randomness (outcome draws, assignment draws,
/// oracle chunks); `index` is usually a replication or chunk number.
pub fn stream(master: u64, role: u64, index: u64) -> ChaCha8Rng {
    let mut state = master ^ role.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(index);
    rng
}

/// Generator for a user-supplied seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    stream(seed, 0, 0)
}
