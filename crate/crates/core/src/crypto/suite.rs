//! The primitive suite: the only place that touches concrete algorithms.
//!
//! Hash: SHA-256. Signatures: Ed25519 over the 32-byte payload digest.
//! Field cipher: ChaCha20-Poly1305 with a random 96-bit nonce. Key wrap:
//! ephemeral X25519 agreement against the reader's key (the Montgomery
//! form of its Ed25519 key), HKDF-SHA256, then ChaCha20-Poly1305.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand_core::{OsRng, RngCore};
use sha2::{Digest as _, Sha256};
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use super::CryptoError;
use crate::message::ActorId;

/// Identifier recorded in every stored artifact produced under this suite.
pub const SUITE_ID: &str = "SHA256-ED25519-X25519HKDF-CHACHA20POLY1305";

pub const DIGEST_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const SYMMETRIC_KEY_LEN: usize = 32;
const NONCE_LEN: usize = 12;
const WRAP_INFO: &[u8] = b"portsec key wrap v1";

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; DIGEST_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::InvalidLength("digest", bytes.len()))?;
        Ok(Digest(arr))
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn digest(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Public half of an identity key: verifies signatures and receives
/// wrapped keys.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::InvalidLength("public key", bytes.len()))?;
        VerifyingKey::from_bytes(&arr).map_err(|_| CryptoError::InvalidKey)?;
        Ok(PublicKey(arr))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    fn verifying(&self) -> VerifyingKey {
        VerifyingKey::from_bytes(&self.0).expect("validated at construction")
    }

    pub fn verify(&self, payload: &[u8], signature: &[u8]) -> bool {
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        self.verifying().verify_strict(payload, &sig).is_ok()
    }

    fn agreement_key(&self) -> XPublic {
        XPublic::from(self.verifying().to_montgomery().to_bytes())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex: String = self.0[..6].iter().map(|b| format!("{b:02x}")).collect();
        write!(f, "PublicKey({hex}..)")
    }
}

/// One key pair per identity, used for both signing and key unwrapping.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    pub owner: ActorId,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32], owner: ActorId) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(&seed),
            owner,
        }
    }

    pub fn generate(owner: ActorId) -> Result<Self, CryptoError> {
        let mut seed = [0u8; 32];
        OsRng
            .try_fill_bytes(&mut seed)
            .map_err(|_| CryptoError::EntropyUnavailable)?;
        Ok(KeyPair::from_seed(seed, owner))
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, payload: &[u8]) -> Vec<u8> {
        self.signing.sign(payload).to_bytes().to_vec()
    }

    fn agreement_secret(&self) -> StaticSecret {
        StaticSecret::from(self.signing.to_scalar_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("owner", &self.owner)
            .field("public", &self.public())
            .finish_non_exhaustive()
    }
}

static NEXT_KEY_ID: AtomicU64 = AtomicU64::new(1);

/// Key material for the field cipher.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey {
    pub bytes: [u8; SYMMETRIC_KEY_LEN],
    pub id: u64,
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricKey(id={})", self.id)
    }
}

pub fn fresh_symmetric_key() -> Result<SymmetricKey, CryptoError> {
    let mut bytes = [0u8; SYMMETRIC_KEY_LEN];
    OsRng
        .try_fill_bytes(&mut bytes)
        .map_err(|_| CryptoError::EntropyUnavailable)?;
    Ok(SymmetricKey {
        bytes,
        id: NEXT_KEY_ID.fetch_add(1, Ordering::Relaxed),
    })
}

pub(crate) fn encrypt(key: &SymmetricKey, plaintext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let mut nonce = [0u8; NONCE_LEN];
    OsRng
        .try_fill_bytes(&mut nonce)
        .map_err(|_| CryptoError::EntropyUnavailable)?;
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.bytes));
    let body = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .map_err(|_| CryptoError::AuthDecryptFailure)?;
    let mut out = nonce.to_vec();
    out.extend_from_slice(&body);
    Ok(out)
}

pub(crate) fn decrypt(key: &[u8; SYMMETRIC_KEY_LEN], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ciphertext.len() < NONCE_LEN {
        return Err(CryptoError::AuthDecryptFailure);
    }
    let (nonce, body) = ciphertext.split_at(NONCE_LEN);
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt(Nonce::from_slice(nonce), body)
        .map_err(|_| CryptoError::AuthDecryptFailure)
}

fn wrapping_key(shared: &[u8], ephemeral: &XPublic, reader: &XPublic) -> [u8; 32] {
    let mut info = WRAP_INFO.to_vec();
    info.extend_from_slice(ephemeral.as_bytes());
    info.extend_from_slice(reader.as_bytes());
    let mut okm = [0u8; 32];
    Hkdf::<Sha256>::new(None, shared)
        .expand(&info, &mut okm)
        .expect("32 bytes is a valid HKDF output length");
    okm
}

/// Wraps `key` for the holder of `reader`'s private key.
/// Output: ephemeral public key (32) || AEAD(wrapping key, zero nonce, key).
pub(crate) fn wrap_key(reader: &PublicKey, key: &SymmetricKey) -> Result<Vec<u8>, CryptoError> {
    let mut eph_bytes = [0u8; 32];
    OsRng
        .try_fill_bytes(&mut eph_bytes)
        .map_err(|_| CryptoError::EntropyUnavailable)?;
    let ephemeral = StaticSecret::from(eph_bytes);
    let eph_public = XPublic::from(&ephemeral);
    let reader_x = reader.agreement_key();
    let shared = ephemeral.diffie_hellman(&reader_x);
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidKey);
    }
    let kek = wrapping_key(shared.as_bytes(), &eph_public, &reader_x);
    let sealed = ChaCha20Poly1305::new(Key::from_slice(&kek))
        .encrypt(
            Nonce::from_slice(&[0u8; NONCE_LEN]),
            Payload {
                msg: &key.bytes,
                aad: eph_public.as_bytes(),
            },
        )
        .map_err(|_| CryptoError::AuthDecryptFailure)?;
    let mut out = eph_public.as_bytes().to_vec();
    out.extend_from_slice(&sealed);
    Ok(out)
}

pub(crate) fn unwrap_key(holder: &KeyPair, wrapped: &[u8]) -> Result<[u8; SYMMETRIC_KEY_LEN], CryptoError> {
    if wrapped.len() < 32 {
        return Err(CryptoError::AuthDecryptFailure);
    }
    let (eph, body) = wrapped.split_at(32);
    let eph_arr: [u8; 32] = eph.try_into().expect("split at 32");
    let eph_public = XPublic::from(eph_arr);
    let secret = holder.agreement_secret();
    let shared = secret.diffie_hellman(&eph_public);
    if !shared.was_contributory() {
        return Err(CryptoError::AuthDecryptFailure);
    }
    let reader_x = XPublic::from(&secret);
    let kek = wrapping_key(shared.as_bytes(), &eph_public, &reader_x);
    let key = ChaCha20Poly1305::new(Key::from_slice(&kek))
        .decrypt(
            Nonce::from_slice(&[0u8; NONCE_LEN]),
            Payload {
                msg: body,
                aad: eph_public.as_bytes(),
            },
        )
        .map_err(|_| CryptoError::AuthDecryptFailure)?;
    key.try_into().map_err(|_| CryptoError::AuthDecryptFailure)
}
