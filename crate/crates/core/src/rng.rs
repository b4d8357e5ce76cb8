use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives an independent, platform-stable generator for one labelled use of
/// a user seed, so that e.g. per-dataset samples do not share a stream.
pub fn rng_for(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for label in labels {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
