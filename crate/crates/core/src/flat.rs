//! Flat segment encoding of [`SecuredMessage`]s.
//!
//! ```text
//! MSG+<msg_type>+<instance_id>+<sender>'
//! ATT+<attr>+P+<b64 text>'
//! ATT+<attr>+H+<b64 digest>'
//! ATT+<attr>+S+<b64 digest>+<b64 ciphertext>+<NNN>{+<reader>+<b64 wrapped key>}'
//! SIG+<signer>+<attr,attr,...>+<b64 signature>'
//! ```
//!
//! Payloads use the URL-safe base64 alphabet so they never need releasing.
//! The sealed reader count is three zero-padded digits and readers appear
//! in ascending order, which makes the encoding canonical.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::{AttributeSignature, Digest};
use crate::message::{ActorId, AttributeId, FieldValue, Message, MsgType, SealedValue, SecuredMessage};
use crate::segment::{self, decode_b64, encode_b64, ParseError, Segment, Writer};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlatError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("duplicate attribute {attr} at byte {offset}")]
    DuplicateAttribute { attr: AttributeId, offset: usize },
    #[error("unknown segment tag {tag:?} at byte {offset}")]
    UnknownSegmentTag { tag: String, offset: usize },
}

impl FlatError {
    pub fn offset(&self) -> usize {
        match self {
            FlatError::Parse(e) => e.offset,
            FlatError::DuplicateAttribute { offset, .. } | FlatError::UnknownSegmentTag { offset, .. } => *offset,
        }
    }
}

const MAX_READERS: usize = 999;

pub fn to_flat(msg: &SecuredMessage) -> Vec<u8> {
    let mut w = Writer::new();
    let m = &msg.message;
    w.segment("MSG", &[m.msg_type.as_str(), &m.instance_id, msg.sender.as_str()]);
    for (attr, value) in m.fields() {
        let mut elems = vec![attr.as_str().to_owned(), value.repr_code().to_string()];
        match value {
            FieldValue::Plain(text) => elems.push(encode_b64(text.as_bytes())),
            FieldValue::HashOnly(d) => elems.push(encode_b64(d.as_bytes())),
            FieldValue::Sealed(s) => {
                assert!(s.wrapped_keys.len() <= MAX_READERS, "too many readers");
                elems.push(encode_b64(s.digest.as_bytes()));
                elems.push(encode_b64(&s.ciphertext));
                elems.push(format!("{:03}", s.wrapped_keys.len()));
                for (reader, key) in &s.wrapped_keys {
                    elems.push(reader.as_str().to_owned());
                    elems.push(encode_b64(key));
                }
            }
        }
        w.segment("ATT", &elems);
    }
    for sig in &msg.signatures {
        let names: Vec<&str> = sig.attrs.iter().map(AttributeId::as_str).collect();
        w.segment("SIG", &[sig.signer.as_str(), &names.join(","), &encode_b64(&sig.sig)]);
    }
    w.finish().into_bytes()
}

fn perr(seg: &Segment, reason: impl Into<String>) -> FlatError {
    FlatError::Parse(ParseError::new(seg.offset, reason))
}

fn b64(seg: &Segment, raw: &str, what: &str) -> Result<Vec<u8>, FlatError> {
    decode_b64(raw).map_err(|e| perr(seg, format!("bad base64 in {what}: {e}")))
}

fn digest_elem(seg: &Segment, raw: &str) -> Result<Digest, FlatError> {
    let bytes = b64(seg, raw, "digest")?;
    Digest::from_slice(&bytes).map_err(|e| perr(seg, e.to_string()))
}

fn actor(seg: &Segment, raw: &str) -> Result<ActorId, FlatError> {
    ActorId::new(raw).map_err(|e| perr(seg, e.to_string()))
}

fn attribute(seg: &Segment, raw: &str) -> Result<AttributeId, FlatError> {
    AttributeId::new(raw).map_err(|e| perr(seg, e.to_string()))
}

fn parse_value(seg: &Segment) -> Result<FieldValue, FlatError> {
    let repr = seg.element(1)?;
    match repr {
        "P" => {
            seg.expect_len(3)?;
            let bytes = b64(seg, seg.element(2)?, "plain value")?;
            let text = String::from_utf8(bytes).map_err(|_| perr(seg, "plain value is not UTF-8"))?;
            Ok(FieldValue::Plain(text))
        }
        "H" => {
            seg.expect_len(3)?;
            Ok(FieldValue::HashOnly(digest_elem(seg, seg.element(2)?)?))
        }
        "S" => {
            let digest = digest_elem(seg, seg.element(2)?)?;
            let ciphertext = b64(seg, seg.element(3)?, "ciphertext")?;
            let count_raw = seg.element(4)?;
            if count_raw.len() != 3 || !count_raw.bytes().all(|b| b.is_ascii_digit()) {
                return Err(perr(seg, format!("reader count {count_raw:?} is not three digits")));
            }
            let count: usize = count_raw.parse().expect("three digits");
            if count == 0 {
                return Err(perr(seg, "sealed value without readers"));
            }
            seg.expect_len(5 + 2 * count)?;
            let mut wrapped_keys = BTreeMap::new();
            let mut last: Option<ActorId> = None;
            for i in 0..count {
                let reader = actor(seg, seg.element(5 + 2 * i)?)?;
                if last.as_ref().is_some_and(|l| *l >= reader) {
                    return Err(perr(seg, "readers must be unique and ascending"));
                }
                let key = b64(seg, seg.element(6 + 2 * i)?, "wrapped key")?;
                last = Some(reader.clone());
                wrapped_keys.insert(reader, key);
            }
            Ok(FieldValue::Sealed(SealedValue {
                digest,
                ciphertext,
                wrapped_keys,
            }))
        }
        other => Err(perr(seg, format!("unknown representation {other:?}"))),
    }
}

pub fn from_flat(bytes: &[u8]) -> Result<SecuredMessage, FlatError> {
    let segments = segment::parse(bytes, false)?;
    let mut iter = segments.iter();
    let header = iter
        .next()
        .ok_or_else(|| FlatError::Parse(ParseError::new(0, "empty message")))?;
    if header.tag != "MSG" {
        return Err(match header.tag.as_str() {
            "ATT" | "SIG" => perr(header, "first segment must be MSG"),
            _ => FlatError::UnknownSegmentTag {
                tag: header.tag.clone(),
                offset: header.offset,
            },
        });
    }
    header.expect_len(3)?;
    let msg_type: MsgType = header
        .element(0)?
        .parse()
        .map_err(|e: crate::message::MessageError| perr(header, e.to_string()))?;
    let instance_id = header.element(1)?.to_owned();
    let sender = actor(header, header.element(2)?)?;

    let mut fields: Vec<(AttributeId, FieldValue)> = Vec::new();
    let mut names = BTreeSet::new();
    let mut signatures = Vec::new();
    for seg in iter {
        match seg.tag.as_str() {
            "ATT" => {
                if !signatures.is_empty() {
                    return Err(perr(seg, "ATT segment after SIG"));
                }
                let attr = attribute(seg, seg.element(0)?)?;
                if !names.insert(attr.clone()) {
                    return Err(FlatError::DuplicateAttribute {
                        attr,
                        offset: seg.offset,
                    });
                }
                let value = parse_value(seg)?;
                fields.push((attr, value));
            }
            "SIG" => {
                seg.expect_len(3)?;
                let signer = actor(seg, seg.element(0)?)?;
                let mut attrs = Vec::new();
                for name in seg.element(1)?.split(',') {
                    let attr = attribute(seg, name)?;
                    if !names.contains(&attr) {
                        return Err(perr(seg, format!("signature covers absent attribute {attr}")));
                    }
                    if attrs.contains(&attr) {
                        return Err(perr(seg, format!("signature lists {attr} twice")));
                    }
                    attrs.push(attr);
                }
                let sig = b64(seg, seg.element(2)?, "signature")?;
                signatures.push(AttributeSignature { signer, attrs, sig });
            }
            "MSG" => return Err(perr(seg, "repeated MSG segment")),
            other => {
                return Err(FlatError::UnknownSegmentTag {
                    tag: other.to_owned(),
                    offset: seg.offset,
                })
            }
        }
    }
    let message = Message::new(msg_type, instance_id, fields).map_err(|e| perr(header, e.to_string()))?;
    SecuredMessage::new(message, signatures, sender).map_err(|e| perr(header, e.to_string()))
}
