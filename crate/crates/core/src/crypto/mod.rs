//! Digests, the double-hash multi-signature scheme and field sealing.

mod multisig;
mod seal;
mod suite;

use thiserror::Error;

pub use multisig::{
    multi_sign, multi_sign_views, multi_sign_with, signing_payload, verify_multi_sig, verify_multi_sig_with,
    AttributeSignature, PayloadMode, View,
};
pub use seal::{open_field, seal_field};
pub use suite::{
    digest, fresh_symmetric_key, Digest, KeyPair, PublicKey, SymmetricKey, DIGEST_LEN,
    SIGNATURE_LEN, SUITE_ID, SYMMETRIC_KEY_LEN,
};

use crate::message::AttributeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("entropy source unavailable")]
    EntropyUnavailable,
    #[error("signature must cover at least one attribute")]
    EmptyFieldList,
    #[error("attribute {0} listed twice")]
    DuplicateAttribute(AttributeId),
    #[error("view list does not match the signed attribute list")]
    AttrListMismatch,
    #[error("sealing needs at least one reader")]
    EmptyReaderSet,
    #[error("no wrapped key for holder {0}")]
    NoWrappedKeyForHolder(String),
    #[error("authenticated decryption failed")]
    AuthDecryptFailure,
    #[error("decrypted value does not match the sealed digest")]
    DigestMismatch,
    #[error("malformed key")]
    InvalidKey,
    #[error("invalid {0} length {1}")]
    InvalidLength(&'static str, usize),
}
