use sha2::{Digest, Sha256};

/// Hex SHA-256 over a sequence of byte fields. Each field is length-prefixed
/// so that field boundaries cannot be shifted to produce a collision.
pub fn digest_fields<'a>(fields: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut hasher = Sha256::new();
    for field in fields {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field);
    }
    hex::encode(hasher.finalize())
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
