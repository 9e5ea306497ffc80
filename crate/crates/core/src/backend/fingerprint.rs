//! Stable request fingerprints.
//!
//! Fields are fed to SHA-256 in a fixed order with explicit little-endian
//! length prefixes, so a fingerprint never depends on platform, process, or
//! serializer details:
//!
//! ```text
//! "rubricon/prompt/v1" 0x00
//! u64 len(system) system
//! u64 n_parts
//!   per part: b'T' u64 len(text) text
//!          or b'I' u64 len(media_type) media_type sha256(bytes)
//! f64 temperature bits (-0.0 folded into 0.0)
//! ```
//!
//! The request fingerprint additionally hashes the prompt fingerprint with the
//! sample index.

use sha2::{Digest, Sha256};

use super::{ModelRequest, UserPart};

fn put_bytes(h: &mut Sha256, bytes: &[u8]) {
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
}

/// Fingerprint of the prompt content, independent of the sample index.
pub fn prompt_fingerprint(request: &ModelRequest) -> String {
    let mut h = Sha256::new();
    h.update(b"rubricon/prompt/v1\0");
    put_bytes(&mut h, request.system_prompt.as_bytes());
    h.update((request.user_parts.len() as u64).to_le_bytes());
    for part in &request.user_parts {
        match part {
            UserPart::Text { text } => {
                h.update(b"T");
                put_bytes(&mut h, text.as_bytes());
            }
            UserPart::Image { bytes, media_type } => {
                h.update(b"I");
                put_bytes(&mut h, media_type.as_bytes());
                h.update(Sha256::digest(bytes));
            }
        }
    }
    let t = if request.temperature == 0.0 { 0.0 } else { request.temperature };
    h.update(t.to_bits().to_le_bytes());
    hex::encode(h.finalize())
}

/// Fingerprint of one concrete call: prompt plus sample index.
pub fn request_fingerprint(request: &ModelRequest, sample_index: u64) -> String {
    let mut h = Sha256::new();
    h.update(b"rubricon/request/v1\0");
    h.update(prompt_fingerprint(request).as_bytes());
    h.update(sample_index.to_le_bytes());
    hex::encode(h.finalize())
}
