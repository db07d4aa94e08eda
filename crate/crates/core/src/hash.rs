use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::vocab::Vocab;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a value's JSON serialization.
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

/// Fingerprint of a vocabulary's id table; models record it so that a
/// checkpoint cannot be paired with a different vocabulary.
pub fn vocab_fingerprint(vocab: &Vocab) -> String {
    let joined: Vec<String> = vocab
        .id_table()
        .into_iter()
        .map(|(id, term)| format!("{id}\t{term}"))
        .collect();
    sha256_hex(joined.join("\n").as_bytes())
}
