// SPDX-License-Identifier: MIT OR Apache-2.0

//! Named seed streams split from one root seed.

use sha2::{Digest, Sha256};

/// First 8 bytes (little endian) of `SHA-256(root_le || name)`.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
