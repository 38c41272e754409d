//! Deterministic random streams.
//!
//! Every random decision in the crate draws from a [`ChaCha8Rng`] whose 256-bit
//! key is `SHA-256(seed as u64 little-endian || label bytes)`. ChaCha output is
//! specified bit-for-bit, so a `(seed, label)` pair produces the same stream on
//! every platform, and different labels give unrelated streams for the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Name recorded in manifest headers so a run can be replayed elsewhere.
pub const GENERATOR_NAME: &str = "chacha8/sha256(seed_le64||label)";

pub const STREAM_KMEANS_INIT: &str = "kmeans-init";
pub const STREAM_RANDOM_BASELINE: &str = "random-baseline";
pub const STREAM_BANDWIDTH: &str = "bandwidth-subsample";
pub const STREAM_SYNTH: &str = "synth";

pub type Stream = ChaCha8Rng;

pub fn seeded_rng(seed: u64, stream_label: &str) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stream_label.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(seed: u64, label: &str) -> Vec<u64> {
        let mut rng = seeded_rng(seed, label);
        (0..100).map(|_| rng.random()).collect()
    }

    #[test]
    fn same_seed_and_label_repeat() {
        assert_eq!(draws(42, "kmeans-init"), draws(42, "kmeans-init"));
    }

    #[test]
    fn labels_separate_streams() {
        assert_ne!(draws(42, "kmeans-init"), draws(42, "random-baseline"));
    }

    #[test]
    fn seeds_separate_streams() {
        assert_ne!(draws(42, "x"), draws(43, "x"));
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen first draw; a change here means manifests are no longer replayable.
        let first: u64 = seeded_rng(42, "kmeans-init").random();
        assert_eq!(first, 6214851215416769627);
    }
}
