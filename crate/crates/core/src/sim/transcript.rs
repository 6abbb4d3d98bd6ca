use crate::adapter::ValidationReport;
use crate::crypto::{digest, Digest};
use crate::flat::{from_flat, to_flat};
use crate::ledger::{AssetState, LedgerAction};
use crate::message::{ActorId, AttributeId, FieldValue};
use crate::policy::Role;
use crate::segment::{self, decode_b64, encode_b64, ParseError, Segment, Writer};

use super::{Mode, Scenario};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Actor {
        actor: ActorId,
        role: Role,
    },
    /// A signature handed over outside any message.
    Author {
        signer: ActorId,
        to: ActorId,
        attrs: Vec<AttributeId>,
        signature: Vec<u8>,
    },
    Step {
        n: usize,
        label: String,
        from: ActorId,
        to: ActorId,
    },
    /// Flat bytes as they arrived at the receiver.
    Sent {
        n: usize,
        bytes: Vec<u8>,
    },
    /// Attributes whose plaintext the sender supplied.
    Held {
        n: usize,
        actor: ActorId,
        attrs: Vec<AttributeId>,
    },
    Validated {
        n: usize,
        actor: ActorId,
        report: ValidationReport,
    },
    Ledger {
        n: usize,
        action: LedgerAction,
        cnt_no: String,
        invoker: ActorId,
        endorser: ActorId,
        /// Block index or error code.
        outcome: Result<u64, String>,
    },
    Query {
        n: usize,
        actor: ActorId,
        cnt_no: String,
        outcome: Result<AssetState, String>,
    },
    /// Chain verification: the faulty block and the fault code.
    Verify {
        outcome: Result<(), (Option<usize>, String)>,
    },
    /// A step that could not be carried out.
    Error {
        n: usize,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunVerdict {
    Pass,
    Fail(String),
}

impl RunVerdict {
    pub fn passed(&self) -> bool {
        *self == RunVerdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub scenario: Scenario,
    pub mode: Mode,
    pub instance: String,
    pub events: Vec<Event>,
    pub verdict: RunVerdict,
}

fn csv(attrs: &[AttributeId]) -> String {
    attrs.iter().map(AttributeId::as_str).collect::<Vec<_>>().join(",")
}

fn parse_csv(seg: &Segment, i: usize) -> Result<Vec<AttributeId>, ParseError> {
    let raw = seg.element(i)?;
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|a| AttributeId::new(a).map_err(|e| ParseError::new(seg.offset, e.to_string())))
        .collect()
}

/// Flat bytes with every sealed ciphertext and wrapped key emptied.
fn blank_randomness(bytes: &[u8]) -> Vec<u8> {
    let Ok(mut sm) = from_flat(bytes) else {
        return bytes.to_vec();
    };
    let attrs: Vec<AttributeId> = sm.message.attributes().cloned().collect();
    for attr in attrs {
        if let Some(FieldValue::Sealed(s)) = sm.message.value_mut(&attr) {
            s.ciphertext.clear();
            for k in s.wrapped_keys.values_mut() {
                k.clear();
            }
        }
    }
    to_flat(&sm)
}

impl Transcript {
    pub fn new(scenario: Scenario, mode: Mode, instance: &str) -> Self {
        Transcript {
            scenario,
            mode,
            instance: instance.to_owned(),
            events: Vec::new(),
            verdict: RunVerdict::Pass,
        }
    }

    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn fail(&mut self, reason: impl Into<String>) {
        if self.verdict.passed() {
            self.verdict = RunVerdict::Fail(reason.into());
        }
    }

    pub fn reports(&self) -> impl Iterator<Item = (usize, &ActorId, &ValidationReport)> {
        self.events.iter().filter_map(|e| match e {
            Event::Validated { n, actor, report } => Some((*n, actor, report)),
            _ => None,
        })
    }

    pub fn report(&self, step: usize) -> Option<&ValidationReport> {
        self.reports().find(|(n, _, _)| *n == step).map(|(_, _, r)| r)
    }

    pub fn sent(&self, step: usize) -> Option<&[u8]> {
        self.events.iter().find_map(|e| match e {
            Event::Sent { n, bytes } if *n == step => Some(bytes.as_slice()),
            _ => None,
        })
    }

    /// (label, from, to) per executed step.
    pub fn steps(&self) -> Vec<(String, ActorId, ActorId)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Step { label, from, to, .. } => Some((label.clone(), from.clone(), to.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn actors(&self) -> impl Iterator<Item = (&ActorId, Role)> {
        self.events.iter().filter_map(|e| match e {
            Event::Actor { actor, role } => Some((actor, *role)),
            _ => None,
        })
    }

    pub fn reject_count(&self) -> usize {
        let rejected_reports = self.reports().filter(|(_, _, r)| !r.accepted()).count();
        let failed_ledger = self
            .events
            .iter()
            .filter(|e| matches!(e, Event::Ledger { outcome: Err(_), .. } | Event::Verify { outcome: Err(_) }))
            .count();
        rejected_reports + failed_ledger
    }

    fn write(&self, w: &mut Writer, normalized: bool) {
        w.segment("TRN", &[self.scenario.as_str(), self.mode.as_str(), &self.instance]);
        for e in &self.events {
            match e {
                Event::Actor { actor, role } => {
                    w.segment("ACTOR", &[actor.as_str(), role.as_str()]);
                }
                Event::Author {
                    signer,
                    to,
                    attrs,
                    signature,
                } => {
                    w.segment("AUTHOR", &[signer.as_str(), to.as_str(), &csv(attrs), &encode_b64(signature)]);
                }
                Event::Step { n, label, from, to } => {
                    w.segment("STEP", &[&n.to_string(), label, from.as_str(), to.as_str()]);
                }
                Event::Sent { n, bytes } => {
                    let bytes = if normalized { blank_randomness(bytes) } else { bytes.clone() };
                    w.segment("SENT", &[n.to_string(), encode_b64(&bytes)]);
                }
                Event::Held { n, actor, attrs } => {
                    w.segment("HELD", &[&n.to_string(), actor.as_str(), &csv(attrs)]);
                }
                Event::Validated { n, actor, report } => {
                    let text = if normalized {
                        ValidationReport {
                            message_digest: Digest::ZERO,
                            ..report.clone()
                        }
                        .to_text()
                    } else {
                        report.to_text()
                    };
                    w.segment("VALIDATED", &[n.to_string(), actor.to_string(), encode_b64(text.as_bytes())]);
                }
                Event::Ledger {
                    n,
                    action,
                    cnt_no,
                    invoker,
                    endorser,
                    outcome,
                } => {
                    let (status, detail) = match outcome {
                        Ok(block) => ("OK".to_owned(), block.to_string()),
                        Err(code) => ("DENIED".to_owned(), code.clone()),
                    };
                    w.segment(
                        "LEDGER",
                        &[
                            &n.to_string(),
                            action.as_str(),
                            cnt_no,
                            invoker.as_str(),
                            endorser.as_str(),
                            &status,
                            &detail,
                        ],
                    );
                }
                Event::Query {
                    n,
                    actor,
                    cnt_no,
                    outcome,
                } => {
                    let result = match outcome {
                        Ok(state) => state.as_str().to_owned(),
                        Err(code) => code.clone(),
                    };
                    w.segment("QUERY", &[&n.to_string(), actor.as_str(), cnt_no, &result]);
                }
                Event::Verify { outcome } => match outcome {
                    Ok(()) => {
                        w.segment("VERIFY", &["OK", "-", ""]);
                    }
                    Err((block, code)) => {
                        let block = block.map_or("-".to_owned(), |b| b.to_string());
                        w.segment("VERIFY", &["FAULT", &block, code]);
                    }
                },
                Event::Error { n, detail } => {
                    w.segment("ERROR", &[&n.to_string(), detail]);
                }
            }
        }
        match &self.verdict {
            RunVerdict::Pass => w.segment("VERDICT", &["PASS", ""]),
            RunVerdict::Fail(reason) => w.segment("VERDICT", &["FAIL", reason]),
        };
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer::lines();
        self.write(&mut w, false);
        w.finish()
    }

    /// Text with fresh-randomness bytes blanked: sealed ciphertexts, wrapped
    /// keys and the message digests that depend on them.
    pub fn normalized_text(&self) -> String {
        let mut w = Writer::lines();
        self.write(&mut w, true);
        w.finish()
    }

    pub fn determinism_digest(&self) -> Digest {
        digest(self.normalized_text().as_bytes())
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let segs = segment::parse(text.as_bytes(), true)?;
        let (head, rest) = segs.split_first().ok_or_else(|| ParseError::new(0, "empty transcript"))?;
        if head.tag != "TRN" {
            return Err(ParseError::new(head.offset, "transcript must start with TRN"));
        }
        head.expect_len(3)?;
        let bad = |seg: &Segment, e: String| ParseError::new(seg.offset, e);
        let mut t = Transcript::new(
            head.element(0)?.parse().map_err(|e| bad(head, e))?,
            head.element(1)?.parse().map_err(|e| bad(head, e))?,
            head.element(2)?,
        );
        let mut verdict = None;
        for seg in rest {
            let actor = |i: usize| ActorId::new(seg.element(i)?).map_err(|e| bad(seg, e.to_string()));
            let event = match seg.tag.as_str() {
                "ACTOR" => {
                    seg.expect_len(2)?;
                    Event::Actor {
                        actor: actor(0)?,
                        role: seg.element(1)?.parse().map_err(|e: crate::policy::PolicyError| bad(seg, e.to_string()))?,
                    }
                }
                "AUTHOR" => {
                    seg.expect_len(4)?;
                    Event::Author {
                        signer: actor(0)?,
                        to: actor(1)?,
                        attrs: parse_csv(seg, 2)?,
                        signature: seg.base64(3)?,
                    }
                }
                "STEP" => {
                    seg.expect_len(4)?;
                    Event::Step {
                        n: seg.number(0)?,
                        label: seg.element(1)?.to_owned(),
                        from: actor(2)?,
                        to: actor(3)?,
                    }
                }
                "SENT" => {
                    seg.expect_len(2)?;
                    Event::Sent {
                        n: seg.number(0)?,
                        bytes: seg.base64(1)?,
                    }
                }
                "HELD" => {
                    seg.expect_len(3)?;
                    Event::Held {
                        n: seg.number(0)?,
                        actor: actor(1)?,
                        attrs: parse_csv(seg, 2)?,
                    }
                }
                "VALIDATED" => {
                    seg.expect_len(3)?;
                    let raw = decode_b64(seg.element(2)?).map_err(|e| bad(seg, e.to_string()))?;
                    let text = String::from_utf8(raw).map_err(|e| bad(seg, e.to_string()))?;
                    Event::Validated {
                        n: seg.number(0)?,
                        actor: actor(1)?,
                        report: ValidationReport::from_text(&text).map_err(|e| bad(seg, e.to_string()))?,
                    }
                }
                "LEDGER" => {
                    seg.expect_len(7)?;
                    let detail = seg.element(6)?;
                    let outcome = match seg.element(5)? {
                        "OK" => Ok(seg.number(6)?),
                        "DENIED" => Err(detail.to_owned()),
                        other => return Err(bad(seg, format!("unknown ledger status {other:?}"))),
                    };
                    Event::Ledger {
                        n: seg.number(0)?,
                        action: seg.element(1)?.parse().map_err(|e| bad(seg, e))?,
                        cnt_no: seg.element(2)?.to_owned(),
                        invoker: actor(3)?,
                        endorser: actor(4)?,
                        outcome,
                    }
                }
                "QUERY" => {
                    seg.expect_len(4)?;
                    let raw = seg.element(3)?;
                    Event::Query {
                        n: seg.number(0)?,
                        actor: actor(1)?,
                        cnt_no: seg.element(2)?.to_owned(),
                        outcome: raw.parse::<AssetState>().map_err(|_| raw.to_owned()),
                    }
                }
                "VERIFY" => {
                    seg.expect_len(3)?;
                    Event::Verify {
                        outcome: match seg.element(0)? {
                            "OK" => Ok(()),
                            _ => Err((
                                match seg.element(1)? {
                                    "-" => None,
                                    _ => Some(seg.number(1)?),
                                },
                                seg.element(2)?.to_owned(),
                            )),
                        },
                    }
                }
                "ERROR" => {
                    seg.expect_len(2)?;
                    Event::Error {
                        n: seg.number(0)?,
                        detail: seg.element(1)?.to_owned(),
                    }
                }
                "VERDICT" => {
                    seg.expect_len(2)?;
                    verdict = Some(match seg.element(0)? {
                        "PASS" => RunVerdict::Pass,
                        _ => RunVerdict::Fail(seg.element(1)?.to_owned()),
                    });
                    continue;
                }
                other => return Err(bad(seg, format!("unknown transcript record {other}"))),
            };
            if verdict.is_some() {
                return Err(bad(seg, "records after VERDICT".into()));
            }
            t.push(event);
        }
        t.verdict = verdict.ok_or_else(|| ParseError::new(text.len(), "missing VERDICT"))?;
        Ok(t)
    }
}
