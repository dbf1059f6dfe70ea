//! Deterministic derivation of independent RNG streams.
//!
//! Every stochastic operation in the crate draws from a stream derived from
//! (base seed, purpose tag, indices). Streams are independent of scheduling,
//! so parallel and serial executions produce bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tags keeping unrelated draws on disjoint streams.
pub mod stream {
    pub const DATASET: u64 = 0x01;
    pub const OBSERVE: u64 = 0x02;
    pub const FIT_INIT: u64 = 0x03;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a ChaCha stream from a base seed and a tag path.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut state = seed ^ 0xA076_1D64_78BD_642F;
    splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        let word = splitmix64(&mut state);
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = derive_rng(7, &[stream::DATASET, 3]);
        let mut b = derive_rng(7, &[stream::DATASET, 3]);
        assert_eq!(a.next_u64(), b.next_u64());

        let mut c = derive_rng(7, &[stream::DATASET, 4]);
        let mut d = derive_rng(8, &[stream::DATASET, 3]);
        let x = derive_rng(7, &[stream::DATASET, 3]).next_u64();
        assert_ne!(x, c.next_u64());
        assert_ne!(x, d.next_u64());
    }

    #[test]
    fn tag_order_matters() {
        let a = derive_rng(1, &[2, 3]).next_u64();
        let b = derive_rng(1, &[3, 2]).next_u64();
        assert_ne!(a, b);
    }
}
