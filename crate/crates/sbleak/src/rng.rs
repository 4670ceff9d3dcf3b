//! Deterministic seed derivation.
//!
//! Every random stream in the simulator is a ChaCha8 generator keyed by a
//! seed derived from (user seed, stream tag) or (user seed, loop index).
//! Deriving instead of sharing one generator is what makes parallel and
//! serial schedules produce identical results: each unit of work owns a
//! stream that depends only on its identity, never on execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step; a solid bit mixer for combining seeds with stream tags.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for the sub-stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// A ChaCha8 generator for the given derived stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn test_streams_are_stable_and_distinct() {
        let a: u64 = stream_rng(7, 1).gen();
        let b: u64 = stream_rng(7, 1).gen();
        let c: u64 = stream_rng(7, 2).gen();
        let d: u64 = stream_rng(8, 1).gen();
        assert_eq!(a, b, "same (seed, stream) must reproduce");
        assert_ne!(a, c, "different streams must diverge");
        assert_ne!(a, d, "different seeds must diverge");
    }

    #[test]
    fn test_derive_seed_spreads_small_inputs() {
        // Adjacent seeds/streams should not produce adjacent outputs.
        let s0 = derive_seed(0, 0);
        let s1 = derive_seed(0, 1);
        let s2 = derive_seed(1, 0);
        assert_ne!(s0.wrapping_add(1), s1);
        assert_ne!(s0.wrapping_add(1), s2);
    }
}
