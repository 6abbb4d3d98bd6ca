//! Attribute-value messages exchanged between port actors.
//!
//! A [`Message`] is an ordered list of attribute-value pairs. Each value is
//! carried in one of three representations: the plaintext itself, only its
//! digest, or a sealed pair of digest and ciphertext with per-reader wrapped
//! keys. A [`SecuredMessage`] adds the attribute signatures that vouch for
//! the values and the identity of the sending actor.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::crypto::{AttributeSignature, Digest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error("invalid attribute name {0:?}")]
    InvalidAttributeId(String),
    #[error("invalid actor identity {0:?}")]
    InvalidActorId(String),
    #[error("duplicate attribute {0}")]
    DuplicateAttribute(AttributeId),
    #[error("unknown message type {0:?}")]
    UnknownMessageType(String),
    #[error("signature by {signer} covers attribute {attr} absent from the message")]
    SignatureCoversMissingAttribute { signer: ActorId, attr: AttributeId },
    #[error("sealed value for {0} has no wrapped keys")]
    SealedWithoutReaders(AttributeId),
}

/// Name of a message attribute, e.g. `CNT_NO`.
///
/// Names are non-empty and restricted to `A-Z`, `0-9` and `_`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeId(Cow<'static, str>);

impl AttributeId {
    pub const B_NO: AttributeId = AttributeId(Cow::Borrowed("B_NO"));
    pub const BL_NO: AttributeId = AttributeId(Cow::Borrowed("BL_NO"));
    pub const CNT_C: AttributeId = AttributeId(Cow::Borrowed("CNT_C"));
    pub const CNT_W: AttributeId = AttributeId(Cow::Borrowed("CNT_W"));
    pub const CSG_DATA: AttributeId = AttributeId(Cow::Borrowed("CSG_DATA"));
    pub const CNT_NO: AttributeId = AttributeId(Cow::Borrowed("CNT_NO"));
    pub const DG: AttributeId = AttributeId(Cow::Borrowed("DG"));
    pub const CNT_LOC: AttributeId = AttributeId(Cow::Borrowed("CNT_LOC"));
    pub const ATB_NO: AttributeId = AttributeId(Cow::Borrowed("ATB_NO"));
    pub const CLR: AttributeId = AttributeId(Cow::Borrowed("CLR"));

    /// The six attributes of the global access-control table.
    pub const CORE: [AttributeId; 6] = [
        Self::B_NO,
        Self::BL_NO,
        Self::CNT_C,
        Self::CNT_W,
        Self::CSG_DATA,
        Self::CNT_NO,
    ];

    /// Attributes the port workflows need beyond the core table.
    pub const EXTENSION: [AttributeId; 4] = [Self::DG, Self::CNT_LOC, Self::ATB_NO, Self::CLR];

    pub fn new(name: &str) -> Result<Self, MessageError> {
        let valid = !name.is_empty()
            && name
                .bytes()
                .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_');
        if valid {
            Ok(AttributeId(Cow::Owned(name.to_owned())))
        } else {
            Err(MessageError::InvalidAttributeId(name.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_core(&self) -> bool {
        Self::CORE.contains(self)
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for AttributeId {
    type Err = MessageError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttributeId::new(s)
    }
}

/// Identity of an actor (person, device or CA) as named in its certificate.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActorId(String);

impl ActorId {
    pub fn new(id: impl Into<String>) -> Result<Self, MessageError> {
        let id = id.into();
        if id.is_empty() || id.chars().any(|c| c.is_control()) {
            return Err(MessageError::InvalidActorId(id));
        }
        Ok(ActorId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl FromStr for ActorId {
    type Err = MessageError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActorId::new(s)
    }
}

/// Canonical byte encoding of a plaintext value: its UTF-8 bytes, unframed.
pub fn canonical_bytes(value: &str) -> &[u8] {
    value.as_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MsgType {
    Iftmcs,
    Ifsta,
    Codeco,
    Icu,
    Lcu,
    PortOrder,
    Manifest,
    AtbNotice,
}

impl MsgType {
    pub const ALL: [MsgType; 8] = [
        MsgType::Iftmcs,
        MsgType::Ifsta,
        MsgType::Codeco,
        MsgType::Icu,
        MsgType::Lcu,
        MsgType::PortOrder,
        MsgType::Manifest,
        MsgType::AtbNotice,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::Iftmcs => "IFTMCS",
            MsgType::Ifsta => "IFSTA",
            MsgType::Codeco => "CODECO",
            MsgType::Icu => "ICU",
            MsgType::Lcu => "LCU",
            MsgType::PortOrder => "PORT_ORDER",
            MsgType::Manifest => "MANIFEST",
            MsgType::AtbNotice => "ATB_NOTICE",
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MsgType {
    type Err = MessageError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MsgType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| MessageError::UnknownMessageType(s.to_owned()))
    }
}

/// A value concealed from everyone except the holders of a wrapped key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedValue {
    /// Digest of the canonical bytes of the plaintext.
    pub digest: Digest,
    /// Authenticated ciphertext (nonce prefixed).
    pub ciphertext: Vec<u8>,
    /// Symmetric key wrapped for each authorized reader.
    pub wrapped_keys: BTreeMap<ActorId, Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Plain(String),
    HashOnly(Digest),
    Sealed(SealedValue),
}

impl FieldValue {
    /// The digest this value contributes to signature verification.
    pub fn digest(&self) -> Digest {
        match self {
            FieldValue::Plain(text) => crate::crypto::digest(canonical_bytes(text)),
            FieldValue::HashOnly(d) => *d,
            FieldValue::Sealed(s) => s.digest,
        }
    }

    pub fn as_plain(&self) -> Option<&str> {
        match self {
            FieldValue::Plain(text) => Some(text),
            _ => None,
        }
    }

    pub fn repr_code(&self) -> char {
        match self {
            FieldValue::Plain(_) => 'P',
            FieldValue::HashOnly(_) => 'H',
            FieldValue::Sealed(_) => 'S',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub msg_type: MsgType,
    pub instance_id: String,
    fields: Vec<(AttributeId, FieldValue)>,
}

impl Message {
    pub fn new(
        msg_type: MsgType,
        instance_id: impl Into<String>,
        fields: Vec<(AttributeId, FieldValue)>,
    ) -> Result<Self, MessageError> {
        let mut seen = BTreeSet::new();
        for (attr, value) in &fields {
            if !seen.insert(attr.clone()) {
                return Err(MessageError::DuplicateAttribute(attr.clone()));
            }
            if let FieldValue::Sealed(s) = value {
                if s.wrapped_keys.is_empty() {
                    return Err(MessageError::SealedWithoutReaders(attr.clone()));
                }
            }
        }
        Ok(Message {
            msg_type,
            instance_id: instance_id.into(),
            fields,
        })
    }

    /// Builds a message whose values are all plaintext.
    pub fn plain<'a>(
        msg_type: MsgType,
        instance_id: impl Into<String>,
        fields: impl IntoIterator<Item = (AttributeId, &'a str)>,
    ) -> Result<Self, MessageError> {
        let fields = fields
            .into_iter()
            .map(|(a, v)| (a, FieldValue::Plain(v.to_owned())))
            .collect();
        Message::new(msg_type, instance_id, fields)
    }

    pub fn fields(&self) -> &[(AttributeId, FieldValue)] {
        &self.fields
    }

    pub fn get(&self, attr: &AttributeId) -> Option<&FieldValue> {
        self.fields.iter().find(|(a, _)| a == attr).map(|(_, v)| v)
    }

    pub fn contains(&self, attr: &AttributeId) -> bool {
        self.get(attr).is_some()
    }

    pub fn attributes(&self) -> impl Iterator<Item = &AttributeId> {
        self.fields.iter().map(|(a, _)| a)
    }

    /// Mutable access for in-transit manipulation. Uniqueness of attribute
    /// names cannot be broken through this handle.
    pub fn value_mut(&mut self, attr: &AttributeId) -> Option<&mut FieldValue> {
        self.fields.iter_mut().find(|(a, _)| a == attr).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecuredMessage {
    pub message: Message,
    pub signatures: Vec<AttributeSignature>,
    pub sender: ActorId,
}

impl SecuredMessage {
    pub fn new(
        message: Message,
        signatures: Vec<AttributeSignature>,
        sender: ActorId,
    ) -> Result<Self, MessageError> {
        for sig in &signatures {
            if let Some(attr) = sig.attrs.iter().find(|a| !message.contains(a)) {
                return Err(MessageError::SignatureCoversMissingAttribute {
                    signer: sig.signer.clone(),
                    attr: attr.clone(),
                });
            }
        }
        Ok(SecuredMessage {
            message,
            signatures,
            sender,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_bytes_is_raw_utf8() {
        assert_eq!(canonical_bytes("textiles"), b"textiles");
        assert_eq!(canonical_bytes("textiles").len(), 8);
        assert!(canonical_bytes("").is_empty());
        // U+00DC encoded by hand: 110_00011 10_011100
        assert_eq!(canonical_bytes("Ü"), &[0xC3, 0x9C]);
        let mut buf = [0u8; 4];
        assert_eq!(canonical_bytes("Ü"), 'Ü'.encode_utf8(&mut buf).as_bytes());
    }

    #[test]
    fn attribute_names_are_validated() {
        assert!(AttributeId::new("CNT_NO").is_ok());
        assert!(AttributeId::new("X9").is_ok());
        assert!(AttributeId::new("").is_err());
        assert!(AttributeId::new("cnt_no").is_err());
        assert!(AttributeId::new("CNT-NO").is_err());
        assert_eq!(AttributeId::new("B_NO").unwrap(), AttributeId::B_NO);
    }

    #[test]
    fn duplicate_attributes_rejected() {
        let err = Message::plain(
            MsgType::Icu,
            "RUN1",
            [(AttributeId::CNT_NO, "A"), (AttributeId::CNT_NO, "B")],
        )
        .unwrap_err();
        assert_eq!(err, MessageError::DuplicateAttribute(AttributeId::CNT_NO));
    }

    #[test]
    fn msg_type_tokens_round_trip() {
        for t in MsgType::ALL {
            assert_eq!(t.as_str().parse::<MsgType>().unwrap(), t);
        }
        assert!("EDIFACT".parse::<MsgType>().is_err());
    }
}
