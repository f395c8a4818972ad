//! Named seed substreams.
//!
//! One experiment seed fans out into independent child seeds keyed by stage
//! name, so each stage can be rerun alone and still reproduce its part of a
//! full pipeline run.

use alloc::string::String;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// Child seed for `name` under `seed`.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}

pub fn rng(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(seed: u64, name: &str) -> StageRng {
    rng(substream(seed, name))
}

pub fn hex(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 15) as usize] as char);
    }
    s
}

/// Uniform value in `[0, 1)` derived from the leading hex digits of a digest.
pub fn digest_fraction(digest: &str) -> f64 {
    let lead = digest.get(..8).unwrap_or(digest);
    let v = u32::from_str_radix(lead, 16).unwrap_or(0);
    v as f64 / (u32::MAX as f64 + 1.0)
}
