//! Seed derivation. Every random consumer gets its own ChaCha stream derived
//! from the run seed and a stream name, so adding a consumer never shifts the
//! draws seen by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const ENV_STREAM: &str = "env";
pub const POLICY_INIT_STREAM: &str = "policy-init";
pub const SAMPLING_STREAM: &str = "sampling";
pub const MINIBATCH_STREAM: &str = "minibatch";
pub const EVAL_STREAM: &str = "eval";

/// 32-byte seed for the named sub-stream of `seed`.
pub fn derive_seed(seed: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.finalize().into()
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, name))
}

/// Derives a 64-bit seed, e.g. for one episode out of a sequence.
pub fn derive_u64(seed: u64, name: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(index.to_le_bytes());
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}
