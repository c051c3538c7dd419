//! Seed derivation for all randomized stages.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is
//! derived from the user seed plus a domain tag and optional indices. Domains
//! keep unrelated streams apart; in particular, evaluation noise
//! ([`NOISE_EVAL`]) never shares a stream with training augmentation noise
//! ([`NOISE_TRAIN`]).

/// Corpus synthesis (speaker prototypes, offsets, frame jitter).
pub const CORPUS: u64 = 1;
/// Noise matrices drawn during training augmentation.
pub const NOISE_TRAIN: u64 = 2;
/// Noise matrices drawn when building evaluation conditions.
pub const NOISE_EVAL: u64 = 3;
/// Trial-list sampling.
pub const TRIALS: u64 = 4;
/// Parameter initialization.
pub const INIT: u64 = 5;
/// Epoch shuffling of the training schedule.
pub const SHUFFLE: u64 = 6;
/// Per-item augmentation decisions (clean-or-noisy flip, SNR, noise kind).
pub const AUG: u64 = 7;

/// Derive a sub-seed from a base seed, a domain tag, and extra indices.
///
/// Splitmix64 finalization is applied after absorbing each part, so seeds
/// from different domains or indices are unrelated for practical purposes.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(base ^ 0x9e37_79b9_7f4a_7c15);
    for &p in parts {
        state = splitmix64(state ^ p);
    }
    state
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(mix_seed(7, &[CORPUS, 3]), mix_seed(7, &[CORPUS, 3]));
    }

    #[test]
    fn domains_separate_streams() {
        // Training-augmentation and evaluation noise seeds must be disjoint
        // over a realistic grid of epochs/items.
        let base = 42u64;
        let mut train = std::collections::HashSet::new();
        let mut eval = std::collections::HashSet::new();
        for a in 0..64u64 {
            for b in 0..64u64 {
                train.insert(mix_seed(base, &[NOISE_TRAIN, a, b]));
                eval.insert(mix_seed(base, &[NOISE_EVAL, a, b]));
            }
        }
        assert_eq!(train.len(), 64 * 64);
        assert_eq!(eval.len(), 64 * 64);
        assert!(train.is_disjoint(&eval));
    }

    #[test]
    fn order_sensitive() {
        assert_ne!(mix_seed(1, &[2, 3]), mix_seed(1, &[3, 2]));
    }
}
