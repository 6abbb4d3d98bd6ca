use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::crypto::Digest;
use crate::message::{ActorId, AttributeId, MsgType};
use crate::segment::{self, encode_b64, ParseError, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FindingCode {
    ChainInvalid,
    SignatureInvalid,
    WriteCoverageGap,
    LinkageMismatch,
    RepresentationViolation,
    DigestMismatch,
    /// A sealed value this actor should open could not be decrypted.
    DecryptFailure,
    /// The bytes on the wire did not parse.
    Malformed,
    NonceReuse,
}

impl FindingCode {
    pub const ALL: [FindingCode; 9] = [
        FindingCode::ChainInvalid,
        FindingCode::SignatureInvalid,
        FindingCode::WriteCoverageGap,
        FindingCode::LinkageMismatch,
        FindingCode::RepresentationViolation,
        FindingCode::DigestMismatch,
        FindingCode::DecryptFailure,
        FindingCode::Malformed,
        FindingCode::NonceReuse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FindingCode::ChainInvalid => "ChainInvalid",
            FindingCode::SignatureInvalid => "SignatureInvalid",
            FindingCode::WriteCoverageGap => "WriteCoverageGap",
            FindingCode::LinkageMismatch => "LinkageMismatch",
            FindingCode::RepresentationViolation => "RepresentationViolation",
            FindingCode::DigestMismatch => "DigestMismatch",
            FindingCode::DecryptFailure => "DecryptFailure",
            FindingCode::Malformed => "Malformed",
            FindingCode::NonceReuse => "NonceReuse",
        }
    }
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FindingCode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FindingCode::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown finding code {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Reject,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub code: FindingCode,
    pub severity: Severity,
    /// The attribute or signer the finding is about.
    pub subject: String,
    pub detail: String,
}

impl Finding {
    pub fn reject(code: FindingCode, subject: impl fmt::Display, detail: impl Into<String>) -> Self {
        Finding {
            code,
            severity: Severity::Reject,
            subject: subject.to_string(),
            detail: detail.into(),
        }
    }

    pub fn warning(code: FindingCode, subject: impl fmt::Display, detail: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Warning,
            ..Finding::reject(code, subject, detail)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "ACCEPT",
            Verdict::Reject => "REJECT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub verdict: Verdict,
    pub receiver: ActorId,
    pub instance_id: String,
    pub msg_type: MsgType,
    /// Digest of the flat bytes that were validated.
    pub message_digest: Digest,
    pub findings: Vec<Finding>,
    pub decrypted_view: BTreeMap<AttributeId, String>,
}

impl ValidationReport {
    pub(crate) fn conclude(mut self) -> Self {
        self.verdict = if self.findings.iter().any(|f| f.severity == Severity::Reject) {
            Verdict::Reject
        } else {
            Verdict::Accept
        };
        self
    }

    /// Report for bytes that never became a message.
    pub fn unparsable(receiver: ActorId, msg_type: MsgType, bytes: &[u8], detail: impl Into<String>) -> Self {
        ValidationReport {
            verdict: Verdict::Reject,
            receiver,
            instance_id: String::new(),
            msg_type,
            message_digest: crate::crypto::digest(bytes),
            findings: vec![Finding::reject(FindingCode::Malformed, "-", detail)],
            decrypted_view: BTreeMap::new(),
        }
    }

    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }

    pub fn has(&self, code: FindingCode) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    pub fn finding(&self, code: FindingCode, subject: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.code == code && f.subject == subject)
    }

    /// First reject-class finding, which is what the simulator reports.
    pub fn first_rejection(&self) -> Option<&Finding> {
        self.findings.iter().find(|f| f.severity == Severity::Reject)
    }

    pub fn write_to(&self, w: &mut Writer) {
        w.segment(
            "VERDICT",
            &[
                self.verdict.as_str(),
                &self.instance_id,
                self.msg_type.as_str(),
                self.receiver.as_str(),
                &encode_b64(self.message_digest.as_bytes()),
            ],
        );
        for f in &self.findings {
            let tag = match f.severity {
                Severity::Reject => "FINDING",
                Severity::Warning => "WARNING",
            };
            w.segment(tag, &[f.code.as_str(), &f.subject, &f.detail]);
        }
        for attr in self.decrypted_view.keys() {
            w.segment("VIEW", &[attr.as_str()]);
        }
    }

    /// Line-oriented text form. Views list attribute names only.
    pub fn to_text(&self) -> String {
        let mut w = Writer::lines();
        self.write_to(&mut w);
        w.finish()
    }

    /// Parses [`to_text`](Self::to_text) output. Plaintext values are not
    /// part of the text form, so the view maps every attribute to "".
    pub fn from_segments(segs: &[segment::Segment]) -> Result<Self, ParseError> {
        let (head, rest) = segs
            .split_first()
            .ok_or_else(|| ParseError::new(0, "empty report"))?;
        if head.tag != "VERDICT" {
            return Err(ParseError::new(head.offset, "report must start with VERDICT"));
        }
        head.expect_len(5)?;
        let bad = |s: &segment::Segment, e: String| ParseError::new(s.offset, e);
        let verdict = match head.element(0)? {
            "ACCEPT" => Verdict::Accept,
            "REJECT" => Verdict::Reject,
            v => return Err(bad(head, format!("unknown verdict {v:?}"))),
        };
        let mut report = ValidationReport {
            verdict,
            instance_id: head.element(1)?.to_owned(),
            msg_type: head.element(2)?.parse().map_err(|e: crate::message::MessageError| bad(head, e.to_string()))?,
            receiver: ActorId::new(head.element(3)?).map_err(|e| bad(head, e.to_string()))?,
            message_digest: Digest::from_slice(&head.base64(4)?).map_err(|e| bad(head, e.to_string()))?,
            findings: Vec::new(),
            decrypted_view: BTreeMap::new(),
        };
        for seg in rest {
            match seg.tag.as_str() {
                "FINDING" | "WARNING" => {
                    seg.expect_len(3)?;
                    let code = seg.element(0)?.parse().map_err(|e| bad(seg, e))?;
                    let severity = if seg.tag == "FINDING" { Severity::Reject } else { Severity::Warning };
                    report.findings.push(Finding {
                        code,
                        severity,
                        subject: seg.element(1)?.to_owned(),
                        detail: seg.element(2)?.to_owned(),
                    });
                }
                "VIEW" => {
                    seg.expect_len(1)?;
                    let attr = AttributeId::new(seg.element(0)?).map_err(|e| bad(seg, e.to_string()))?;
                    report.decrypted_view.insert(attr, String::new());
                }
                other => return Err(bad(seg, format!("unexpected {other} in report"))),
            }
        }
        Ok(report)
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        Self::from_segments(&segment::parse(text.as_bytes(), true)?)
    }
}
