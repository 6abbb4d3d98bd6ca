use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::adapter::{Direction, FindingCode};
use crate::crypto::{multi_sign_views, View};
use crate::flat::from_flat;
use crate::ledger::{export_chain, verify_chain_bytes, PendingTransaction, Transaction};
use crate::message::{ActorId, AttributeId, FieldValue, MsgType, SecuredMessage};
use crate::segment::{self, Writer};

use super::run::{run_script, Intercept, NoIntercept};
use super::script::{script, Step};
use super::transcript::{Event, Transcript};
use super::{Fixtures, Mode, Scenario, SimError, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackKind {
    TamperField,
    ReplaySplice,
    NonceReuse,
    UnauthorizedAuthor,
    LedgerTamper,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::TamperField,
        AttackKind::ReplaySplice,
        AttackKind::NonceReuse,
        AttackKind::UnauthorizedAuthor,
        AttackKind::LedgerTamper,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::TamperField => "TAMPER_FIELD",
            AttackKind::ReplaySplice => "REPLAY_SPLICE",
            AttackKind::NonceReuse => "NONCE_REUSE",
            AttackKind::UnauthorizedAuthor => "UNAUTHORIZED_AUTHOR",
            AttackKind::LedgerTamper => "LEDGER_TAMPER",
        }
    }

    pub fn applies_to(self, mode: Mode) -> bool {
        !(self == AttackKind::LedgerTamper && mode == Mode::P2p)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown attack kind {s:?}"))
    }
}

/// Where an attack strikes. Unset fields take the kind's default.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackTarget {
    pub step: Option<usize>,
    pub attr: Option<AttributeId>,
    /// Index of a signature to corrupt instead of a value.
    pub signature: Option<usize>,
    pub block: Option<usize>,
    /// Byte of the exported chain to flip.
    pub byte: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target: AttackTarget,
    pub payload: Option<String>,
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        AttackSpec {
            kind,
            target: AttackTarget::default(),
            payload: None,
        }
    }

    pub fn at_step(mut self, step: usize) -> Self {
        self.target.step = Some(step);
        self
    }

    pub fn on_attr(mut self, attr: AttributeId) -> Self {
        self.target.attr = Some(attr);
        self
    }

    pub fn on_signature(mut self, index: usize) -> Self {
        self.target.signature = Some(index);
        self
    }

    pub fn on_block(mut self, block: usize) -> Self {
        self.target.block = Some(block);
        self
    }

    pub fn on_byte(mut self, byte: usize) -> Self {
        self.target.byte = Some(byte);
        self
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer::lines();
        w.segment("ATTACK", &[self.kind.as_str()]);
        let t = &self.target;
        if let Some(s) = t.step {
            w.segment("TARGET", &["STEP".to_owned(), s.to_string()]);
        }
        if let Some(a) = &t.attr {
            w.segment("TARGET", &["ATTR", a.as_str()]);
        }
        if let Some(s) = t.signature {
            w.segment("TARGET", &["SIG".to_owned(), s.to_string()]);
        }
        if let Some(b) = t.block {
            w.segment("TARGET", &["BLOCK".to_owned(), b.to_string()]);
        }
        if let Some(b) = t.byte {
            w.segment("TARGET", &["BYTE".to_owned(), b.to_string()]);
        }
        if let Some(p) = &self.payload {
            w.segment("PAYLOAD", &[p]);
        }
        w.finish()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, SimError> {
        let segs = segment::parse(bytes, true)?;
        let err = |seg: &segment::Segment, reason: String| SimError::Parse(segment::ParseError::new(seg.offset, reason));
        let mut spec: Option<AttackSpec> = None;
        for seg in &segs {
            match seg.tag.as_str() {
                "ATTACK" if spec.is_none() => {
                    seg.expect_len(1)?;
                    spec = Some(AttackSpec::new(seg.element(0)?.parse().map_err(|e| err(seg, e))?));
                }
                "TARGET" | "PAYLOAD" => {
                    let s = spec.as_mut().ok_or_else(|| err(seg, "ATTACK must come first".into()))?;
                    if seg.tag == "PAYLOAD" {
                        seg.expect_len(1)?;
                        s.payload = Some(seg.element(0)?.to_owned());
                        continue;
                    }
                    seg.expect_len(2)?;
                    match seg.element(0)? {
                        "STEP" => s.target.step = Some(seg.number(1)?),
                        "ATTR" => {
                            s.target.attr = Some(AttributeId::new(seg.element(1)?).map_err(|e| err(seg, e.to_string()))?)
                        }
                        "SIG" => s.target.signature = Some(seg.number(1)?),
                        "BLOCK" => s.target.block = Some(seg.number(1)?),
                        "BYTE" => s.target.byte = Some(seg.number(1)?),
                        other => return Err(err(seg, format!("unknown target {other}"))),
                    }
                }
                other => return Err(err(seg, format!("unexpected attack record {other}"))),
            }
        }
        spec.ok_or_else(|| SimError::Parse(segment::ParseError::new(0, "missing ATTACK record")))
    }
}

/// Who the evidence blames for a rejected message or a broken chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Localization {
    /// Changed between sender and receiver.
    Transit { from: ActorId, to: ActorId },
    /// Sent as received by the named actor.
    Sender(ActorId),
    /// The first chain block that fails verification.
    Block(usize),
}

impl fmt::Display for Localization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Localization::Transit { from, to } => write!(f, "in transit {from} -> {to}"),
            Localization::Sender(a) => write!(f, "sender {a}"),
            Localization::Block(b) => write!(f, "block {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionReport {
    pub kind: AttackKind,
    pub scenario: Scenario,
    pub mode: Mode,
    pub applicable: bool,
    pub detected: bool,
    /// The rejecting actor, or `ledger` for chaincode and chain checks.
    pub detector: Option<String>,
    pub code: Option<String>,
    pub step: Option<usize>,
    pub localized: Option<Localization>,
    /// The run the attack happened in.
    pub transcript: Option<Transcript>,
}

impl DetectionReport {
    fn not_applicable(kind: AttackKind, scenario: Scenario, mode: Mode) -> Self {
        DetectionReport {
            kind,
            scenario,
            mode,
            applicable: false,
            detected: false,
            detector: None,
            code: None,
            step: None,
            localized: None,
            transcript: None,
        }
    }

    pub fn summary(&self) -> String {
        if !self.applicable {
            return format!("{} {} {}: not applicable", self.kind, self.scenario, self.mode);
        }
        if !self.detected {
            return format!("{} {} {}: NOT DETECTED", self.kind, self.scenario, self.mode);
        }
        let mut line = format!(
            "{} {} {}: detected by {} with {}",
            self.kind,
            self.scenario,
            self.mode,
            self.detector.as_deref().unwrap_or("?"),
            self.code.as_deref().unwrap_or("?")
        );
        if let Some(n) = self.step {
            line.push_str(&format!(" at step {n}"));
        }
        if let Some(l) = &self.localized {
            line.push_str(&format!(", localized {l}"));
        }
        line
    }
}

/// Changes one value so that its digest changes: a plaintext is replaced by
/// `payload` or has its first byte's low bit flipped, a digest or sealed
/// value has the first digest byte flipped. Returns false when `attr` is not
/// in the message.
pub fn mutate_field(sm: &mut SecuredMessage, attr: &AttributeId, payload: Option<&str>) -> bool {
    let Some(value) = sm.message.value_mut(attr) else {
        return false;
    };
    match value {
        FieldValue::Plain(text) => *text = mutated_text(text, payload),
        FieldValue::HashOnly(d) => d.0[0] ^= 1,
        FieldValue::Sealed(s) => s.digest.0[0] ^= 1,
    }
    true
}

fn mutated_text(text: &str, payload: Option<&str>) -> String {
    match payload {
        Some(p) if p != text => p.to_owned(),
        _ => match text.as_bytes().first() {
            Some(b) if b.is_ascii() => {
                let mut out = String::with_capacity(text.len());
                out.push((b ^ 1) as char);
                out.push_str(&text[1..]);
                out
            }
            _ => format!("{text}X"),
        },
    }
}

/// Compares what the receiver recorded for one message with what the
/// sender recorded sending. Records the sender never logged point to a
/// change in transit, unless they carry the sender's own valid signature.
pub fn localize(world: &World, instance: &str, msg_type: MsgType, from: &ActorId, to: &ActorId) -> Localization {
    let sent: Vec<_> = world
        .adapter(from)
        .query_signature_store(instance)
        .into_iter()
        .filter(|r| r.direction == Direction::Outbound && r.msg_type == Some(msg_type) && r.peer == *to)
        .collect();
    let got: Vec<_> = world
        .adapter(to)
        .query_signature_store(instance)
        .into_iter()
        .filter(|r| r.direction == Direction::Inbound && r.msg_type == Some(msg_type) && r.peer == *from)
        .collect();
    let transit = got.is_empty()
        || got.iter().any(|r| {
            let logged = sent.iter().any(|s| s.signature == r.signature && s.digests == r.digests);
            let own = r.verified && r.signature.signer == *from;
            !logged && !own
        });
    if transit {
        Localization::Transit {
            from: from.clone(),
            to: to.clone(),
        }
    } else {
        Localization::Sender(from.clone())
    }
}

fn decode(t: &Transcript, n: usize) -> Option<SecuredMessage> {
    from_flat(t.sent(n)?).ok()
}

/// Corrupts one value or one signature of the message at `step`.
struct Tamper<'a> {
    step: usize,
    attr: Option<AttributeId>,
    signature: Option<usize>,
    payload: Option<&'a str>,
    applied: Result<(), String>,
}

impl Intercept for Tamper<'_> {
    fn message(&mut self, n: usize, sm: &mut SecuredMessage, _: &World) {
        if n != self.step {
            return;
        }
        self.applied = if let Some(i) = self.signature {
            match sm.signatures.get_mut(i) {
                Some(sig) if !sig.sig.is_empty() => {
                    sig.sig[0] ^= 1;
                    Ok(())
                }
                _ => Err(format!("step {n} has no signature {i}")),
            }
        } else {
            let attr = match &self.attr {
                Some(a) => a.clone(),
                None => match sm.message.attributes().next() {
                    Some(a) => a.clone(),
                    None => return,
                },
            };
            if mutate_field(sm, &attr, self.payload) {
                Ok(())
            } else {
                Err(format!("step {n} carries no {attr}"))
            }
        };
    }

    fn pending(&mut self, n: usize, p: &mut PendingTransaction, _: &World) {
        if n != self.step {
            return;
        }
        self.applied = match &self.attr {
            None => {
                p.tx.cnt_no = mutated_text(&p.tx.cnt_no, self.payload);
                Ok(())
            }
            Some(a) if *a == AttributeId::CNT_NO => {
                p.tx.cnt_no = mutated_text(&p.tx.cnt_no, self.payload);
                Ok(())
            }
            Some(a) => Err(format!("transactions carry no {a}")),
        };
    }
}

/// Replaces, at `step`, a signature by someone other than the sender with
/// the same signer's signature from the first run, together with the
/// first-run values only that signature covers.
struct Splice {
    step: usize,
    first: Transcript,
    applied: Result<(), String>,
}

impl Intercept for Splice {
    fn message(&mut self, n: usize, sm: &mut SecuredMessage, _: &World) {
        if n != self.step {
            return;
        }
        let Some(old) = decode(&self.first, n) else {
            self.applied = Err(format!("first run has no message at step {n}"));
            return;
        };
        let Some(i) = sm.signatures.iter().position(|s| s.signer != sm.sender) else {
            self.applied = Err(format!("step {n} carries no foreign signature"));
            return;
        };
        let signer = sm.signatures[i].signer.clone();
        let Some(replayed) = old.signatures.iter().find(|s| s.signer == signer).cloned() else {
            self.applied = Err(format!("first run has no signature by {signer} at step {n}"));
            return;
        };
        for attr in &replayed.attrs {
            let shared = sm.signatures.iter().enumerate().any(|(j, s)| j != i && s.covers(attr));
            if shared {
                continue;
            }
            if let (Some(slot), Some(v)) = (sm.message.value_mut(attr), old.message.get(attr)) {
                *slot = v.clone();
            }
        }
        sm.signatures[i] = replayed;
        self.applied = Ok(());
    }
}

/// Records the signed transactions of a run.
#[derive(Default)]
struct Recorder {
    txs: Vec<(usize, Transaction)>,
}

impl Intercept for Recorder {
    fn transaction(&mut self, n: usize, tx: &mut Transaction, _: &World) {
        self.txs.push((n, tx.clone()));
    }
}

struct ReplayTx {
    step: usize,
    old: Vec<(usize, Transaction)>,
    applied: Result<(), String>,
}

impl Intercept for ReplayTx {
    fn transaction(&mut self, n: usize, tx: &mut Transaction, _: &World) {
        if n != self.step {
            return;
        }
        self.applied = match self.old.iter().find(|(m, _)| *m == n) {
            Some((_, old)) => {
                *tx = old.clone();
                Ok(())
            }
            None => Err(format!("first run signed nothing at step {n}")),
        };
    }
}

/// The sender replaces a value, drops every signature over it and signs
/// the orphaned attributes itself.
struct Insider<'a> {
    step: usize,
    attr: AttributeId,
    payload: Option<&'a str>,
    applied: Result<(), String>,
}

impl Intercept for Insider<'_> {
    fn message(&mut self, n: usize, sm: &mut SecuredMessage, world: &World) {
        if n != self.step {
            return;
        }
        let Some(value) = sm.message.value_mut(&self.attr) else {
            self.applied = Err(format!("step {n} carries no {}", self.attr));
            return;
        };
        let current = value.as_plain().unwrap_or_default().to_owned();
        *value = FieldValue::Plain(mutated_text(&current, self.payload));
        let mut orphaned = BTreeSet::new();
        sm.signatures.retain(|s| {
            let drop = s.covers(&self.attr);
            if drop {
                orphaned.extend(s.attrs.iter().cloned());
            }
            !drop
        });
        let views: Vec<(AttributeId, View)> = sm
            .message
            .fields()
            .iter()
            .filter(|(a, _)| orphaned.contains(a))
            .map(|(a, v)| {
                let view = match v {
                    FieldValue::Plain(text) => View::Plain(text),
                    other => View::Digest(other.digest()),
                };
                (a.clone(), view)
            })
            .collect();
        let key = &world.keys[&sm.sender];
        let mode = world.adapter(&sm.sender).payload_mode;
        match multi_sign_views(mode, key, &views) {
            Ok(sig) => {
                sm.signatures.push(sig);
                self.applied = Ok(());
            }
            Err(e) => self.applied = Err(e.to_string()),
        }
    }
}

/// Has the step's endorser invoke the transaction in place of the invoker.
struct Usurp {
    step: usize,
    actor: ActorId,
    applied: Result<(), String>,
}

impl Intercept for Usurp {
    fn transaction(&mut self, n: usize, tx: &mut Transaction, world: &World) {
        if n != self.step {
            return;
        }
        *tx = Transaction::sign(
            tx.action,
            &tx.cnt_no,
            tx.terminal.as_deref(),
            world.leaves[&self.actor].clone(),
            &world.keys[&self.actor],
        );
        self.applied = Ok(());
    }
}

fn unresolved(applied: Result<(), String>) -> Result<(), SimError> {
    applied.map_err(SimError::TargetUnresolved)
}

fn pending_target() -> Result<(), String> {
    Err("target step was never reached".into())
}

/// First rejection in a transcript: (step, detector, code). A linkage
/// mismatch names the splice better than the signature failure behind it.
fn first_detection(t: &Transcript) -> Option<(Option<usize>, String, String)> {
    for e in &t.events {
        match e {
            Event::Validated { n, actor, report } if !report.accepted() => {
                let code = if report.has(FindingCode::LinkageMismatch) {
                    FindingCode::LinkageMismatch.to_string()
                } else {
                    report.first_rejection().map_or("Rejected".to_owned(), |f| f.code.to_string())
                };
                return Some((Some(*n), actor.to_string(), code));
            }
            Event::Ledger {
                n, outcome: Err(code), ..
            } => return Some((Some(*n), "ledger".into(), code.clone())),
            Event::Verify {
                outcome: Err((_, code)),
            } => return Some((None, "ledger".into(), code.clone())),
            _ => {}
        }
    }
    None
}

fn first_warning(t: &Transcript, code: &str) -> Option<(usize, String)> {
    t.reports()
        .find(|(_, _, r)| r.findings.iter().any(|f| f.code.as_str() == code))
        .map(|(n, a, _)| (n, a.to_string()))
}

fn default_step(fx: &Fixtures, scenario: Scenario, mode: Mode, kind: AttackKind) -> usize {
    if mode == Mode::Ledger || kind != AttackKind::UnauthorizedAuthor {
        return 0;
    }
    let s = script(fx, scenario, mode, false);
    let wanted = match scenario {
        Scenario::Import => MsgType::PortOrder,
        Scenario::Export => MsgType::Icu,
    };
    s.steps
        .iter()
        .position(|st| matches!(st, Step::Message(m) if m.msg_type == wanted))
        .unwrap_or(0)
}

/// Runs `scenario` in `mode` on a fresh world built from `fx` with the
/// attack described by `spec` and reports whether and where it was caught.
pub fn inject_attack(fx: &Fixtures, scenario: Scenario, mode: Mode, spec: &AttackSpec) -> Result<DetectionReport, SimError> {
    let kind = spec.kind;
    if !kind.applies_to(mode) {
        return Ok(DetectionReport::not_applicable(kind, scenario, mode));
    }
    let mut world = World::build(fx)?;
    let first = script(fx, scenario, mode, false);
    let second = script(fx, scenario, mode, true);
    let step = spec.target.step.unwrap_or_else(|| default_step(fx, scenario, mode, kind));
    if kind != AttackKind::LedgerTamper && step >= first.steps.len() {
        return Err(SimError::TargetUnresolved(format!("step {step} of {} steps", first.steps.len())));
    }
    let payload = spec.payload.as_deref();

    let mut report = DetectionReport {
        kind,
        scenario,
        mode,
        applicable: true,
        detected: false,
        detector: None,
        code: None,
        step: None,
        localized: None,
        transcript: None,
    };

    let t = match (kind, mode) {
        (AttackKind::TamperField, _) => {
            let mut hook = Tamper {
                step,
                attr: spec.target.attr.clone(),
                signature: spec.target.signature,
                payload,
                applied: pending_target(),
            };
            let t = run_script(&mut world, &first, &mut hook);
            unresolved(hook.applied)?;
            t
        }
        (AttackKind::ReplaySplice, Mode::P2p) => {
            let t1 = run_script(&mut world, &first, &mut NoIntercept);
            let mut hook = Splice {
                step: spec.target.step.unwrap_or_else(|| foreign_step(&t1).unwrap_or(0)),
                first: t1,
                applied: pending_target(),
            };
            let t = run_script(&mut world, &second, &mut hook);
            unresolved(hook.applied)?;
            t
        }
        (AttackKind::ReplaySplice, Mode::Ledger) => {
            let mut rec = Recorder::default();
            run_script(&mut world, &first, &mut rec);
            let mut hook = ReplayTx {
                step,
                old: rec.txs,
                applied: pending_target(),
            };
            let t = run_script(&mut world, &second, &mut hook);
            unresolved(hook.applied)?;
            t
        }
        (AttackKind::NonceReuse, _) => {
            run_script(&mut world, &first, &mut NoIntercept);
            let mut again = first.clone();
            again.instance = second.instance.clone();
            run_script(&mut world, &again, &mut NoIntercept)
        }
        (AttackKind::UnauthorizedAuthor, Mode::P2p) => {
            let mut hook = Insider {
                step,
                attr: spec.target.attr.clone().unwrap_or(AttributeId::CNT_W),
                payload,
                applied: pending_target(),
            };
            let t = run_script(&mut world, &first, &mut hook);
            unresolved(hook.applied)?;
            t
        }
        (AttackKind::UnauthorizedAuthor, Mode::Ledger) => {
            let actor = world.cast(first.steps[step].to()).clone();
            let mut hook = Usurp {
                step,
                actor,
                applied: pending_target(),
            };
            let t = run_script(&mut world, &first, &mut hook);
            unresolved(hook.applied)?;
            t
        }
        (AttackKind::LedgerTamper, _) => {
            let mut t = run_script(&mut world, &first, &mut NoIntercept);
            let outcome = tamper_chain(&mut world, spec)?;
            if let Err((block, code)) = &outcome {
                report.localized = block.map(Localization::Block);
                t.fail(format!("chain verification failed at block {block:?}: {code}"));
            }
            t.push(Event::Verify { outcome });
            t
        }
    };

    if kind == AttackKind::NonceReuse && mode == Mode::P2p {
        if let Some((n, actor)) = first_warning(&t, "NonceReuse") {
            report.detected = true;
            report.detector = Some(actor);
            report.code = Some("NonceReuse".into());
            report.step = Some(n);
            if let Some(m) = first.message_step(n) {
                report.localized = Some(Localization::Sender(world.cast(m.from).clone()));
            }
        }
    } else if let Some((n, detector, code)) = first_detection(&t) {
        report.detected = true;
        report.detector = Some(detector);
        report.code = Some(code);
        report.step = n;
        if let Some(m) = n.and_then(|n| first.message_step(n)) {
            let (from, to) = (world.cast(m.from).clone(), world.cast(m.to).clone());
            report.localized = Some(localize(&world, &t.instance, m.msg_type, &from, &to));
        } else if report.localized.is_none() {
            report.localized = n.and_then(|n| localize_transaction(&world, &t, n));
        }
    }
    report.transcript = Some(t);
    Ok(report)
}

/// A transaction whose signature no longer verifies was changed after its
/// invoker signed it; any other rejection is the signer's own doing.
fn localize_transaction(world: &World, t: &Transcript, step: usize) -> Option<Localization> {
    t.events.iter().find_map(|e| match e {
        Event::Ledger {
            n,
            invoker,
            outcome: Err(code),
            ..
        } if *n == step => Some(if code == "InvalidSignature" {
            Localization::Transit {
                from: invoker.clone(),
                to: world.fixtures.orderer.0.clone(),
            }
        } else {
            Localization::Sender(invoker.clone())
        }),
        _ => None,
    })
}

/// The first step whose message carries a signature by someone other than
/// its sender.
fn foreign_step(t: &Transcript) -> Option<usize> {
    t.events.iter().find_map(|e| match e {
        Event::Sent { n, bytes } => {
            let sm = from_flat(bytes).ok()?;
            sm.signatures.iter().any(|s| s.signer != sm.sender).then_some(*n)
        }
        _ => None,
    })
}

/// Corrupts the committed chain and verifies it, either in memory (a
/// transaction's container number in `block`) or through the exported
/// bytes (`byte`).
fn tamper_chain(world: &mut World, spec: &AttackSpec) -> Result<Result<(), (Option<usize>, String)>, SimError> {
    if let Some(byte) = spec.target.byte {
        let mut bytes = export_chain(world.ledger.orderer_certificate(), world.ledger.chain()).into_bytes();
        let len = bytes.len();
        let b = bytes
            .get_mut(byte)
            .ok_or_else(|| SimError::TargetUnresolved(format!("byte {byte} of {len}")))?;
        *b ^= 1;
        return Ok(verify_chain_bytes(&world.ledger.config, &bytes)
            .map(|_| ())
            .map_err(|f| (f.block, f.kind.code().to_owned())));
    }
    let block = spec.target.block.unwrap_or(1);
    let payload = spec.payload.as_deref();
    let blocks = world.ledger.blocks_mut();
    let tx = blocks
        .get_mut(block)
        .and_then(|b| b.transactions.first_mut())
        .ok_or_else(|| SimError::TargetUnresolved(format!("block {block} holds no transaction")))?;
    tx.cnt_no = mutated_text(&tx.cnt_no, payload);
    Ok(world.ledger.verify_chain().map_err(|f| (f.block, f.kind.code().to_owned())))
}

/// One default attack of every kind.
pub fn battery(fx: &Fixtures, scenario: Scenario, mode: Mode) -> Result<Vec<DetectionReport>, SimError> {
    AttackKind::ALL
        .into_iter()
        .map(|k| inject_attack(fx, scenario, mode, &AttackSpec::new(k)))
        .collect()
}

/// Tampers, one run at a time, with every value and every signature of
/// every message of a peer-to-peer run.
pub fn tamper_sweep(fx: &Fixtures, scenario: Scenario) -> Result<Vec<DetectionReport>, SimError> {
    let mut world = World::build(fx)?;
    let honest = run_script(&mut world, &script(fx, scenario, Mode::P2p, false), &mut NoIntercept);
    let mut out = Vec::new();
    for e in &honest.events {
        let Event::Sent { n, .. } = e else { continue };
        let sm = decode(&honest, *n).ok_or_else(|| SimError::Setup(format!("honest step {n} does not parse")))?;
        for attr in sm.message.attributes() {
            let spec = AttackSpec::new(AttackKind::TamperField).at_step(*n).on_attr(attr.clone());
            out.push(inject_attack(fx, scenario, Mode::P2p, &spec)?);
        }
        for i in 0..sm.signatures.len() {
            let spec = AttackSpec::new(AttackKind::TamperField).at_step(*n).on_signature(i);
            out.push(inject_attack(fx, scenario, Mode::P2p, &spec)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Role;
    use proptest::prelude::*;

    fn fx() -> Fixtures {
        Fixtures::default_fixtures()
    }

    fn world_cast(role: Role) -> ActorId {
        World::build(&fx()).unwrap().cast(role).clone()
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = AttackSpec {
            kind: AttackKind::TamperField,
            target: AttackTarget {
                step: Some(2),
                attr: Some(AttributeId::CNT_W),
                signature: None,
                block: Some(1),
                byte: Some(77),
            },
            payload: Some("9'9".into()),
        };
        assert_eq!(AttackSpec::parse(spec.to_text().as_bytes()).unwrap(), spec);
        assert!(AttackSpec::parse(b"TARGET+STEP+1'").is_err());
        assert!(AttackSpec::parse(b"ATTACK+SMASH'").is_err());
    }

    #[test]
    fn mutation_changes_the_digest() {
        assert_eq!(mutated_text("12000", None), "02000");
        assert_eq!(mutated_text("", None), "X");
        assert_eq!(mutated_text("über", None), "überX");
        assert_eq!(mutated_text("a", Some("a")), "`");
        assert_eq!(mutated_text("a", Some("b")), "b");
    }

    proptest! {
        #[test]
        fn mutated_text_always_differs(s in ".{0,12}", p in proptest::option::of(".{0,4}")) {
            prop_assert_ne!(mutated_text(&s, p.as_deref()), s);
        }
    }

    #[test]
    fn tamper_is_caught_in_transit() {
        for scenario in Scenario::ALL {
            let r = inject_attack(&fx(), scenario, Mode::P2p, &AttackSpec::new(AttackKind::TamperField).on_attr(AttributeId::CNT_W)).unwrap();
            assert!(r.detected, "{}", r.summary());
            assert_eq!(r.step, Some(0));
            assert!(matches!(r.localized, Some(Localization::Transit { .. })), "{}", r.summary());
        }
    }

    #[test]
    fn splice_is_a_linkage_mismatch() {
        for scenario in Scenario::ALL {
            let r = inject_attack(&fx(), scenario, Mode::P2p, &AttackSpec::new(AttackKind::ReplaySplice)).unwrap();
            assert!(r.detected, "{}", r.summary());
            let t = r.transcript.as_ref().unwrap();
            let rep = t.report(r.step.unwrap()).unwrap();
            assert!(rep.has(FindingCode::LinkageMismatch), "{:?}", rep.findings);
            assert_eq!(r.code.as_deref(), Some("LinkageMismatch"));
            assert!(matches!(r.localized, Some(Localization::Transit { .. })), "{}", r.summary());
        }
    }

    #[test]
    fn insider_is_blamed() {
        for scenario in Scenario::ALL {
            let r = inject_attack(&fx(), scenario, Mode::P2p, &AttackSpec::new(AttackKind::UnauthorizedAuthor)).unwrap();
            assert!(r.detected, "{}", r.summary());
            assert_eq!(r.code.as_deref(), Some("WriteCoverageGap"));
            assert!(matches!(r.localized, Some(Localization::Sender(_))), "{}", r.summary());
        }
    }

    #[test]
    fn ledger_battery_codes() {
        for scenario in Scenario::ALL {
            let reports = battery(&fx(), scenario, Mode::Ledger).unwrap();
            let codes: Vec<_> = reports.iter().map(|r| r.code.clone().unwrap_or_default()).collect();
            assert!(reports.iter().all(|r| r.detected), "{codes:?}");
            assert_eq!(codes[0], "InvalidSignature");
            assert_eq!(codes[1], "DuplicateContainer");
            assert_eq!(codes[2], "DuplicateContainer");
            assert_eq!(codes[3], "RoleDenied");
            assert!(matches!(reports[0].localized, Some(Localization::Transit { .. })));
            let usurper = world_cast(Role::Terminal);
            assert_eq!(reports[3].localized, Some(Localization::Sender(usurper)));
            assert_eq!(codes[4], "OrdererSignature");
            assert_eq!(reports[4].localized, Some(Localization::Block(1)));
        }
    }

    #[test]
    fn ledger_tamper_is_not_a_p2p_attack() {
        let r = inject_attack(&fx(), Scenario::Export, Mode::P2p, &AttackSpec::new(AttackKind::LedgerTamper)).unwrap();
        assert!(!r.applicable);
    }

    #[test]
    fn unresolvable_targets() {
        let spec = AttackSpec::new(AttackKind::TamperField).at_step(99);
        assert!(matches!(inject_attack(&fx(), Scenario::Import, Mode::P2p, &spec), Err(SimError::TargetUnresolved(_))));
        let spec = AttackSpec::new(AttackKind::TamperField).on_attr(AttributeId::ATB_NO);
        assert!(matches!(inject_attack(&fx(), Scenario::Import, Mode::P2p, &spec), Err(SimError::TargetUnresolved(_))));
        let spec = AttackSpec::new(AttackKind::LedgerTamper).on_block(40);
        assert!(matches!(inject_attack(&fx(), Scenario::Import, Mode::Ledger, &spec), Err(SimError::TargetUnresolved(_))));
    }
}
