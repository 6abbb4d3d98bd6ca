use std::collections::BTreeSet;

use super::suite::{digest, Digest, KeyPair, PublicKey};
use super::CryptoError;
use crate::message::{canonical_bytes, ActorId, AttributeId};

/// A signature by one actor over the values of an ordered attribute list.
///
/// The signed payload is `h(h(v1) || ... || h(vk))`; the attribute names
/// travel alongside and are not part of the payload in the default mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSignature {
    pub signer: ActorId,
    pub attrs: Vec<AttributeId>,
    pub sig: Vec<u8>,
}

impl AttributeSignature {
    pub fn covers(&self, attr: &AttributeId) -> bool {
        self.attrs.contains(attr)
    }
}

/// What a verifier knows about one covered value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View<'a> {
    Plain(&'a str),
    Digest(Digest),
}

impl View<'_> {
    pub fn value_digest(&self) -> Digest {
        match self {
            View::Plain(text) => digest(canonical_bytes(text)),
            View::Digest(d) => *d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PayloadMode {
    /// Only the values are hashed.
    #[default]
    ValuesOnly,
    /// The digest of the comma-joined attribute names is prepended.
    BindNames,
}

/// The double-hash payload over already-hashed values.
pub fn signing_payload(mode: PayloadMode, attrs: &[AttributeId], value_digests: &[Digest]) -> Digest {
    let mut concat = Vec::with_capacity((value_digests.len() + 1) * super::DIGEST_LEN);
    if mode == PayloadMode::BindNames {
        let names: Vec<&str> = attrs.iter().map(AttributeId::as_str).collect();
        concat.extend_from_slice(digest(names.join(",").as_bytes()).as_bytes());
    }
    for d in value_digests {
        concat.extend_from_slice(d.as_bytes());
    }
    digest(&concat)
}

fn check_attr_list<'a>(attrs: impl Iterator<Item = &'a AttributeId>) -> Result<(), CryptoError> {
    let mut seen = BTreeSet::new();
    let mut any = false;
    for a in attrs {
        any = true;
        if !seen.insert(a) {
            return Err(CryptoError::DuplicateAttribute(a.clone()));
        }
    }
    if any {
        Ok(())
    } else {
        Err(CryptoError::EmptyFieldList)
    }
}

pub fn multi_sign(key: &KeyPair, fields: &[(AttributeId, &str)]) -> Result<AttributeSignature, CryptoError> {
    multi_sign_with(PayloadMode::default(), key, fields)
}

pub fn multi_sign_with(
    mode: PayloadMode,
    key: &KeyPair,
    fields: &[(AttributeId, &str)],
) -> Result<AttributeSignature, CryptoError> {
    check_attr_list(fields.iter().map(|(a, _)| a))?;
    let attrs: Vec<AttributeId> = fields.iter().map(|(a, _)| a.clone()).collect();
    let digests: Vec<Digest> = fields
        .iter()
        .map(|(_, v)| digest(canonical_bytes(v)))
        .collect();
    let payload = signing_payload(mode, &attrs, &digests);
    Ok(AttributeSignature {
        signer: key.owner.clone(),
        attrs,
        sig: key.sign(payload.as_bytes()),
    })
}

/// Signs values the signer may hold only as digests.
pub fn multi_sign_views(
    mode: PayloadMode,
    key: &KeyPair,
    views: &[(AttributeId, View<'_>)],
) -> Result<AttributeSignature, CryptoError> {
    check_attr_list(views.iter().map(|(a, _)| a))?;
    let attrs: Vec<AttributeId> = views.iter().map(|(a, _)| a.clone()).collect();
    let digests: Vec<Digest> = views.iter().map(|(_, v)| v.value_digest()).collect();
    let payload = signing_payload(mode, &attrs, &digests);
    Ok(AttributeSignature {
        signer: key.owner.clone(),
        attrs,
        sig: key.sign(payload.as_bytes()),
    })
}

pub fn verify_multi_sig(
    public: &PublicKey,
    sig: &AttributeSignature,
    views: &[(AttributeId, View<'_>)],
) -> Result<bool, CryptoError> {
    verify_multi_sig_with(PayloadMode::default(), public, sig, views)
}

pub fn verify_multi_sig_with(
    mode: PayloadMode,
    public: &PublicKey,
    sig: &AttributeSignature,
    views: &[(AttributeId, View<'_>)],
) -> Result<bool, CryptoError> {
    if views.len() != sig.attrs.len() || views.iter().zip(&sig.attrs).any(|((a, _), b)| a != b) {
        return Err(CryptoError::AttrListMismatch);
    }
    let digests: Vec<Digest> = views.iter().map(|(_, v)| v.value_digest()).collect();
    let payload = signing_payload(mode, &sig.attrs, &digests);
    Ok(public.verify(payload.as_bytes(), &sig.sig))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest as _, Sha256};

    fn key(seed: u8, name: &str) -> KeyPair {
        KeyPair::from_seed([seed; 32], ActorId::new(name).unwrap())
    }

    fn plain_views<'a>(fields: &'a [(AttributeId, &'a str)]) -> Vec<(AttributeId, View<'a>)> {
        fields.iter().map(|(a, v)| (a.clone(), View::Plain(v))).collect()
    }

    // Independent recomputation of h(h(v1)..h(vk)) straight from sha2.
    fn oracle_payload(values: &[&str]) -> [u8; 32] {
        let mut outer = Sha256::new();
        for v in values {
            outer.update(Sha256::digest(v.as_bytes()));
        }
        outer.finalize().into()
    }

    #[test]
    fn importer_signature_verifies() {
        let importer = key(1, "imp1-clerk");
        let fields = [
            (AttributeId::B_NO, "B123"),
            (AttributeId::CNT_C, "textiles"),
            (AttributeId::CSG_DATA, "ACME GmbH, Bremen"),
        ];
        let sig = multi_sign(&importer, &fields).unwrap();
        assert_eq!(sig.attrs, vec![AttributeId::B_NO, AttributeId::CNT_C, AttributeId::CSG_DATA]);
        assert!(verify_multi_sig(&importer.public(), &sig, &plain_views(&fields)).unwrap());
        let payload = oracle_payload(&["B123", "textiles", "ACME GmbH, Bremen"]);
        assert!(importer.public().verify(&payload, &sig.sig));
    }

    #[test]
    fn single_field_collapses_to_double_hash() {
        let kp = key(2, "sl1-clerk");
        let sig = multi_sign(&kp, &[(AttributeId::CNT_W, "12000")]).unwrap();
        let inner = Sha256::digest(b"12000");
        let outer: [u8; 32] = Sha256::digest(inner).into();
        assert!(kp.public().verify(&outer, &sig.sig));
    }

    #[test]
    fn payload_is_order_sensitive() {
        let a = oracle_payload(&["B123", "textiles"]);
        let b = oracle_payload(&["textiles", "B123"]);
        assert_ne!(a, b);
        let d1 = signing_payload(
            PayloadMode::ValuesOnly,
            &[AttributeId::B_NO, AttributeId::CNT_C],
            &[digest(b"B123"), digest(b"textiles")],
        );
        let d2 = signing_payload(
            PayloadMode::ValuesOnly,
            &[AttributeId::CNT_C, AttributeId::B_NO],
            &[digest(b"textiles"), digest(b"B123")],
        );
        assert_eq!(d1.0, a);
        assert_eq!(d2.0, b);
    }

    #[test]
    fn mixed_views_verify() {
        let importer = key(1, "imp1-clerk");
        let fields = [
            (AttributeId::B_NO, "B123"),
            (AttributeId::CNT_C, "textiles"),
            (AttributeId::CSG_DATA, "ACME GmbH, Bremen"),
        ];
        let sig = multi_sign(&importer, &fields).unwrap();
        let views = vec![
            (AttributeId::B_NO, View::Plain("B123")),
            (AttributeId::CNT_C, View::Digest(digest(b"textiles"))),
            (AttributeId::CSG_DATA, View::Digest(digest(b"ACME GmbH, Bremen"))),
        ];
        assert!(verify_multi_sig(&importer.public(), &sig, &views).unwrap());
        let from_views = multi_sign_views(PayloadMode::ValuesOnly, &importer, &views).unwrap();
        assert_eq!(from_views, sig);
    }

    #[test]
    fn flipped_byte_fails() {
        let kp = key(1, "imp1-clerk");
        let fields = [(AttributeId::B_NO, "B123"), (AttributeId::CNT_C, "textiles")];
        let sig = multi_sign(&kp, &fields).unwrap();
        let tampered = [(AttributeId::B_NO, "B123"), (AttributeId::CNT_C, "texuiles")];
        assert_ne!(
            oracle_payload(&["B123", "textiles"]),
            oracle_payload(&["B123", "texuiles"])
        );
        assert!(!verify_multi_sig(&kp.public(), &sig, &plain_views(&tampered)).unwrap());
    }

    #[test]
    fn errors() {
        let kp = key(1, "x");
        assert_eq!(multi_sign(&kp, &[]), Err(CryptoError::EmptyFieldList));
        assert_eq!(
            multi_sign(&kp, &[(AttributeId::B_NO, "1"), (AttributeId::B_NO, "2")]),
            Err(CryptoError::DuplicateAttribute(AttributeId::B_NO))
        );
        let sig = multi_sign(&kp, &[(AttributeId::B_NO, "1"), (AttributeId::CNT_C, "2")]).unwrap();
        let swapped = [
            (AttributeId::CNT_C, View::Plain("2")),
            (AttributeId::B_NO, View::Plain("1")),
        ];
        assert_eq!(
            verify_multi_sig(&kp.public(), &sig, &swapped),
            Err(CryptoError::AttrListMismatch)
        );
        assert_eq!(
            verify_multi_sig(&kp.public(), &sig, &swapped[..1]),
            Err(CryptoError::AttrListMismatch)
        );
    }

    #[test]
    fn wrong_key_fails() {
        let kp = key(1, "a");
        let other = key(9, "b");
        let fields = [(AttributeId::CNT_NO, "MSCU1234565")];
        let sig = multi_sign(&kp, &fields).unwrap();
        assert!(!verify_multi_sig(&other.public(), &sig, &plain_views(&fields)).unwrap());
    }

    #[test]
    fn name_binding_mode_is_distinct() {
        let kp = key(4, "a");
        let fields = [(AttributeId::CNT_W, "1"), (AttributeId::BL_NO, "2")];
        let strict = multi_sign_with(PayloadMode::BindNames, &kp, &fields).unwrap();
        let views = plain_views(&fields);
        assert!(verify_multi_sig_with(PayloadMode::BindNames, &kp.public(), &strict, &views).unwrap());
        assert!(!verify_multi_sig(&kp.public(), &strict, &views).unwrap());
        // Same values under renamed attributes verify only in the default mode.
        let renamed_fields = [(AttributeId::CNT_C, "1"), (AttributeId::BL_NO, "2")];
        let plain = multi_sign(&kp, &fields).unwrap();
        let mut renamed = plain.clone();
        renamed.attrs[0] = AttributeId::CNT_C;
        assert!(verify_multi_sig(&kp.public(), &renamed, &plain_views(&renamed_fields)).unwrap());
        let mut renamed_strict = strict.clone();
        renamed_strict.attrs[0] = AttributeId::CNT_C;
        assert!(!verify_multi_sig_with(
            PayloadMode::BindNames,
            &kp.public(),
            &renamed_strict,
            &plain_views(&renamed_fields)
        )
        .unwrap());
    }
}
