use std::collections::BTreeMap;

use super::suite::{self, digest, KeyPair, PublicKey};
use super::CryptoError;
use crate::message::{canonical_bytes, ActorId, FieldValue, SealedValue};

/// Seals `value` under a fresh symmetric key wrapped for every reader.
pub fn seal_field(value: &str, readers: &[(ActorId, PublicKey)]) -> Result<FieldValue, CryptoError> {
    if readers.is_empty() {
        return Err(CryptoError::EmptyReaderSet);
    }
    let key = suite::fresh_symmetric_key()?;
    let bytes = canonical_bytes(value);
    let ciphertext = suite::encrypt(&key, bytes)?;
    let mut wrapped_keys = BTreeMap::new();
    for (reader, public) in readers {
        wrapped_keys.insert(reader.clone(), suite::wrap_key(public, &key)?);
    }
    Ok(FieldValue::Sealed(SealedValue {
        digest: digest(bytes),
        ciphertext,
        wrapped_keys,
    }))
}

pub fn open_field(sealed: &SealedValue, holder: &ActorId, key: &KeyPair) -> Result<String, CryptoError> {
    let wrapped = sealed
        .wrapped_keys
        .get(holder)
        .ok_or_else(|| CryptoError::NoWrappedKeyForHolder(holder.to_string()))?;
    let sym = suite::unwrap_key(key, wrapped)?;
    let plaintext = suite::decrypt(&sym, &sealed.ciphertext)?;
    if digest(&plaintext) != sealed.digest {
        return Err(CryptoError::DigestMismatch);
    }
    String::from_utf8(plaintext).map_err(|_| CryptoError::DigestMismatch)
}
