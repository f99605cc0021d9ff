//! Seeded random streams.
//!
//! Every stream is a xoshiro256++ generator whose 256-bit state is filled by
//! splitmix64 from a 64-bit seed. Derived seeds (per client, per round) are
//! produced by folding extra words through the splitmix64 finalizer, so the
//! whole simulator is reproducible from one integer.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64 step: advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and an ordered list of words, e.g. `[client_id, round]`.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    let mut state = seed;
    let mut out = splitmix64(&mut state);
    for &w in words {
        state ^= w.wrapping_mul(GOLDEN_GAMMA) ^ out;
        out = splitmix64(&mut state);
    }
    out
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}
