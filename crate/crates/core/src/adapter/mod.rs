//! The per-actor creator and validator of secured messages.
//!
//! An [`AdapterState`] turns plain messages into [`SecuredMessage`]s
//! according to the protection plan, validates what it receives, forwards
//! accepted content and keeps an append-only signature store.

mod report;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use report::{Finding, FindingCode, Severity, ValidationReport, Verdict};
pub use crate::pki::TrustContext;

use crate::crypto::{
    digest, multi_sign_views, open_field, seal_field, verify_multi_sig_with, AttributeSignature,
    CryptoError, Digest, KeyPair, PayloadMode, PublicKey, View,
};
use crate::flat::to_flat;
use crate::message::{
    canonical_bytes, ActorId, AttributeId, FieldValue, Message, MessageError, MsgType,
    SecuredMessage,
};
use crate::pki::{Certificate, Timestamp};
use crate::policy::{protection_plan, AccessMatrix, Action, PolicyError, Representation, Role};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdapterError {
    #[error("{role} may not write {attr}")]
    WritePermissionDenied { role: Role, attr: AttributeId },
    #[error("carried signature by {signer} rejected: {reason}")]
    CarriedSignatureInvalid { signer: ActorId, reason: String },
    #[error(transparent)]
    Plan(#[from] PolicyError),
    #[error("message was not accepted by this adapter")]
    NotValidated,
    #[error("no value for {0}")]
    MissingValue(AttributeId),
    #[error("no certified reader with role {0}")]
    NoRecipient(Role),
    #[error("unusable credentials: {0}")]
    Credentials(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Message(#[from] MessageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoncePolicy {
    #[default]
    Warn,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Inbound,
    Outbound,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Inbound => "IN",
            Direction::Outbound => "OUT",
        }
    }
}

/// One signature that passed through an adapter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreRecord {
    pub seq: u64,
    pub at: Timestamp,
    pub instance_id: String,
    /// Absent for signatures handed over outside a message.
    pub msg_type: Option<MsgType>,
    pub direction: Direction,
    /// Who the signature came from or went to.
    pub peer: ActorId,
    pub signature: AttributeSignature,
    /// Digest of each covered value, in signature order.
    pub digests: Vec<Digest>,
    pub verified: bool,
}

/// Where an outbound message goes and who reads it after the receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub to: ActorId,
    pub role: Role,
    pub downstream: BTreeSet<Role>,
}

impl Route {
    pub fn new(to: ActorId, role: Role) -> Self {
        Route {
            to,
            role,
            downstream: BTreeSet::new(),
        }
    }

    pub fn downstream(mut self, roles: impl IntoIterator<Item = Role>) -> Self {
        self.downstream.extend(roles);
        self
    }
}

/// How an accepted message is passed on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardSpec {
    pub msg_type: MsgType,
    /// Attributes taken over from the validated message, in output order.
    pub select: Vec<AttributeId>,
    /// Values the forwarder authors itself, appended after the selection.
    pub added: Vec<(AttributeId, String)>,
    /// Selected attributes the forwarder co-signs together with `added`.
    pub attest: Vec<AttributeId>,
}

fn view_of(value: &FieldValue) -> View<'_> {
    match value {
        FieldValue::Plain(text) => View::Plain(text),
        other => View::Digest(other.digest()),
    }
}

fn views_of<'m>(msg: &'m Message, attrs: &[AttributeId]) -> Option<Vec<(AttributeId, View<'m>)>> {
    attrs
        .iter()
        .map(|a| msg.get(a).map(|v| (a.clone(), view_of(v))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct AdapterState {
    pub identity: ActorId,
    pub role: Role,
    pub org: String,
    key: KeyPair,
    pub chain: Vec<Certificate>,
    pub matrix: AccessMatrix,
    pub nonce_policy: NoncePolicy,
    pub payload_mode: PayloadMode,
    store: Vec<StoreRecord>,
    seen_booking_numbers: BTreeMap<Digest, String>,
    known: BTreeMap<(AttributeId, Digest), String>,
}

impl AdapterState {
    /// `chain` starts with this actor's own certificate.
    pub fn new(key: KeyPair, chain: Vec<Certificate>, matrix: AccessMatrix) -> Result<Self, AdapterError> {
        let leaf = chain
            .first()
            .ok_or_else(|| AdapterError::Credentials("empty certificate chain".into()))?;
        if leaf.public_key != key.public() || leaf.subject != key.owner {
            return Err(AdapterError::Credentials("certificate does not match key".into()));
        }
        let role = leaf
            .role
            .ok_or_else(|| AdapterError::Credentials("certificate carries no role".into()))?;
        Ok(AdapterState {
            identity: leaf.subject.clone(),
            role,
            org: leaf.org.clone(),
            key,
            chain,
            matrix,
            nonce_policy: NoncePolicy::default(),
            payload_mode: PayloadMode::default(),
            store: Vec::new(),
            seen_booking_numbers: BTreeMap::new(),
            known: BTreeMap::new(),
        })
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public()
    }

    pub fn store(&self) -> &[StoreRecord] {
        &self.store
    }

    /// All signature records of one workflow run, in the order they passed.
    pub fn query_signature_store(&self, instance_id: &str) -> Vec<&StoreRecord> {
        self.store.iter().filter(|r| r.instance_id == instance_id).collect()
    }

    /// Plaintext this adapter legitimately holds for a value digest.
    pub fn known_plaintext(&self, attr: &AttributeId, d: &Digest) -> Option<&str> {
        self.known.get(&(attr.clone(), *d)).map(String::as_str)
    }

    fn remember(&mut self, attr: &AttributeId, text: &str) {
        self.known
            .insert((attr.clone(), digest(canonical_bytes(text))), text.to_owned());
    }

    #[allow(clippy::too_many_arguments)]
    fn append(
        &mut self,
        instance_id: &str,
        msg_type: Option<MsgType>,
        direction: Direction,
        peer: &ActorId,
        at: Timestamp,
        signature: &AttributeSignature,
        digests: Vec<Digest>,
        verified: bool,
    ) {
        self.store.push(StoreRecord {
            seq: self.store.len() as u64,
            at,
            instance_id: instance_id.to_owned(),
            msg_type,
            direction,
            peer: peer.clone(),
            signature: signature.clone(),
            digests,
            verified,
        });
    }

    fn record_message(&mut self, sm: &SecuredMessage, direction: Direction, peer: &ActorId, at: Timestamp, verified: &[bool]) {
        for (i, sig) in sm.signatures.iter().enumerate() {
            let digests = sig
                .attrs
                .iter()
                .map(|a| sm.message.get(a).map_or(Digest::ZERO, FieldValue::digest))
                .collect();
            self.append(
                &sm.message.instance_id,
                Some(sm.message.msg_type),
                direction,
                peer,
                at,
                sig,
                digests,
                verified[i],
            );
        }
    }

    /// Signs plaintext values handed to another actor outside any message.
    pub fn sign_out_of_band(
        &mut self,
        instance_id: &str,
        fields: &[(AttributeId, &str)],
        to: &ActorId,
        at: Timestamp,
    ) -> Result<AttributeSignature, AdapterError> {
        for (attr, _) in fields {
            if !self.matrix.allows(self.role, attr, Action::Read) {
                return Err(PolicyError::SenderCannotRead {
                    role: self.role,
                    attr: attr.clone(),
                }
                .into());
            }
        }
        let views: Vec<(AttributeId, View)> = fields.iter().map(|(a, v)| (a.clone(), View::Plain(v))).collect();
        let sig = multi_sign_views(self.payload_mode, &self.key, &views)?;
        let digests = views.iter().map(|(_, v)| v.value_digest()).collect();
        self.append(instance_id, None, Direction::Outbound, to, at, &sig, digests, true);
        for (attr, text) in fields {
            self.remember(attr, text);
        }
        Ok(sig)
    }

    /// Accepts a signature and its plaintext values handed over outside any
    /// message. Values this actor may not read are dropped after checking.
    pub fn receive_out_of_band(
        &mut self,
        instance_id: &str,
        sig: &AttributeSignature,
        fields: &[(AttributeId, &str)],
        from: &ActorId,
        trust: &TrustContext,
    ) -> Result<(), AdapterError> {
        let invalid = |reason: &str| AdapterError::CarriedSignatureInvalid {
            signer: sig.signer.clone(),
            reason: reason.into(),
        };
        let public = trust.public_key(&sig.signer).ok_or_else(|| invalid("signer not certified"))?;
        let views: Vec<(AttributeId, View)> = fields.iter().map(|(a, v)| (a.clone(), View::Plain(v))).collect();
        if !verify_multi_sig_with(self.payload_mode, &public, sig, &views).unwrap_or(false) {
            return Err(invalid("values do not match"));
        }
        let digests = views.iter().map(|(_, v)| v.value_digest()).collect();
        self.append(instance_id, None, Direction::Inbound, from, trust.now, sig, digests, true);
        for (attr, text) in fields {
            if self.matrix.allows(self.role, attr, Action::Read) {
                self.remember(attr, text);
            }
        }
        Ok(())
    }

    /// Secures `msg` for `route`, signing what this actor authors: every
    /// attribute not covered by a carried signature, plus the ones it may
    /// write.
    pub fn secure_outbound(
        &mut self,
        msg: &Message,
        carried: &[AttributeSignature],
        route: &Route,
        trust: &TrustContext,
    ) -> Result<SecuredMessage, AdapterError> {
        self.secure_outbound_attesting(msg, carried, None, route, trust)
    }

    /// Like [`secure_outbound`](Self::secure_outbound) with an explicit list
    /// of carried-over attributes to co-sign.
    pub fn secure_outbound_attesting(
        &mut self,
        msg: &Message,
        carried: &[AttributeSignature],
        attest: Option<&[AttributeId]>,
        route: &Route,
        trust: &TrustContext,
    ) -> Result<SecuredMessage, AdapterError> {
        for (attr, value) in msg.fields() {
            if matches!(value, FieldValue::Plain(_)) && !self.matrix.allows(self.role, attr, Action::Read) {
                return Err(PolicyError::SenderCannotRead {
                    role: self.role,
                    attr: attr.clone(),
                }
                .into());
            }
        }
        for sig in carried {
            let invalid = |reason: &str| AdapterError::CarriedSignatureInvalid {
                signer: sig.signer.clone(),
                reason: reason.into(),
            };
            let public = trust.public_key(&sig.signer).ok_or_else(|| invalid("signer not certified"))?;
            let views = views_of(msg, &sig.attrs).ok_or_else(|| invalid("covers an absent attribute"))?;
            if !verify_multi_sig_with(self.payload_mode, &public, sig, &views).unwrap_or(false) {
                return Err(invalid("values do not match"));
            }
        }
        let covered: BTreeSet<&AttributeId> = carried.iter().flat_map(|s| s.attrs.iter()).collect();
        let attest: BTreeSet<AttributeId> = match attest {
            Some(list) => {
                if let Some(a) = list.iter().find(|a| !msg.contains(a)) {
                    return Err(AdapterError::MissingValue(a.clone()));
                }
                list.iter().cloned().collect()
            }
            None => msg
                .attributes()
                .filter(|a| self.matrix.allows(self.role, a, Action::Write))
                .cloned()
                .collect(),
        };
        let mut own = Vec::new();
        for (attr, value) in msg.fields() {
            let authored = !covered.contains(attr);
            if !authored && !attest.contains(attr) {
                continue;
            }
            if authored && !self.matrix.allows(self.role, attr, Action::Write) {
                return Err(AdapterError::WritePermissionDenied {
                    role: self.role,
                    attr: attr.clone(),
                });
            }
            if !self.matrix.allows(self.role, attr, Action::Read) {
                return Err(PolicyError::SenderCannotRead {
                    role: self.role,
                    attr: attr.clone(),
                }
                .into());
            }
            own.push((attr.clone(), view_of(value)));
        }

        let attrs: Vec<AttributeId> = msg.attributes().cloned().collect();
        let plan = protection_plan(&self.matrix, self.role, route.role, &route.downstream, &attrs)?;
        let mut fields = Vec::with_capacity(attrs.len());
        for ((attr, value), (_, repr)) in msg.fields().iter().zip(&plan.representations) {
            fields.push((attr.clone(), self.represent(attr, value, repr, trust)?));
        }
        let mut signatures = carried.to_vec();
        if !own.is_empty() {
            signatures.push(multi_sign_views(self.payload_mode, &self.key, &own)?);
        }
        let sm = SecuredMessage::new(
            Message::new(msg.msg_type, msg.instance_id.clone(), fields)?,
            signatures,
            self.identity.clone(),
        )?;
        for (attr, value) in msg.fields() {
            if let FieldValue::Plain(text) = value {
                self.remember(attr, text);
            }
        }
        let all = vec![true; sm.signatures.len()];
        self.record_message(&sm, Direction::Outbound, &route.to, trust.now, &all);
        Ok(sm)
    }

    fn represent(
        &self,
        attr: &AttributeId,
        value: &FieldValue,
        repr: &Representation,
        trust: &TrustContext,
    ) -> Result<FieldValue, AdapterError> {
        let d = value.digest();
        let plaintext = match value {
            FieldValue::Plain(text) => Some(text.clone()),
            _ => self.known_plaintext(attr, &d).map(str::to_owned),
        };
        Ok(match repr {
            Representation::Plain => match plaintext {
                Some(text) => FieldValue::Plain(text),
                None => value.clone(),
            },
            Representation::HashOnly => FieldValue::HashOnly(d),
            Representation::Sealed(roles) => match (value, plaintext) {
                (FieldValue::Sealed(_), _) => value.clone(),
                (_, Some(text)) => seal_field(&text, &self.readers(roles, trust)?)?,
                (_, None) => FieldValue::HashOnly(d),
            },
        })
    }

    fn readers(&self, roles: &BTreeSet<Role>, trust: &TrustContext) -> Result<Vec<(ActorId, PublicKey)>, AdapterError> {
        let mut out = Vec::new();
        for role in roles {
            let found = trust.actors_with_role(*role);
            if found.is_empty() {
                return Err(AdapterError::NoRecipient(*role));
            }
            out.extend(found);
        }
        Ok(out)
    }

    /// Runs every validation phase and reports all findings.
    pub fn validate_inbound(
        &mut self,
        sm: &SecuredMessage,
        sender_chain: &[Certificate],
        trust: &TrustContext,
    ) -> ValidationReport {
        let msg = &sm.message;
        let mut findings = Vec::new();

        let sender_ok = match trust.validate(sender_chain) {
            Ok(leaf) if leaf.subject == sm.sender => true,
            Ok(leaf) => {
                findings.push(Finding::reject(
                    FindingCode::ChainInvalid,
                    &sm.sender,
                    format!("presented chain belongs to {}", leaf.subject),
                ));
                false
            }
            Err(e) => {
                findings.push(Finding::reject(FindingCode::ChainInvalid, &sm.sender, e.as_str()));
                false
            }
        };

        let n = sm.signatures.len();
        let mut verified = vec![false; n];
        let mut signer_roles: Vec<Option<Role>> = vec![None; n];
        for (i, sig) in sm.signatures.iter().enumerate() {
            let leaf = if sig.signer == sm.sender {
                sender_ok.then(|| &sender_chain[0])
            } else {
                match trust.chain_of(&sig.signer).map(|c| trust.validate(c)) {
                    None => {
                        findings.push(Finding::reject(FindingCode::ChainInvalid, &sig.signer, "no certificate"));
                        None
                    }
                    Some(Err(e)) => {
                        findings.push(Finding::reject(FindingCode::ChainInvalid, &sig.signer, e.as_str()));
                        None
                    }
                    Some(Ok(leaf)) if leaf.subject != sig.signer => {
                        findings.push(Finding::reject(FindingCode::ChainInvalid, &sig.signer, "directory mismatch"));
                        None
                    }
                    Some(Ok(leaf)) => Some(leaf),
                }
            };
            let Some(leaf) = leaf else { continue };
            signer_roles[i] = leaf.role;
            let ok = views_of(msg, &sig.attrs)
                .map(|views| verify_multi_sig_with(self.payload_mode, &leaf.public_key, sig, &views).unwrap_or(false))
                .unwrap_or(false);
            verified[i] = ok;
            if !ok {
                let attrs: Vec<&str> = sig.attrs.iter().map(AttributeId::as_str).collect();
                findings.push(Finding::reject(
                    FindingCode::SignatureInvalid,
                    &sig.signer,
                    format!("over {}", attrs.join(",")),
                ));
            }
        }

        for attr in msg.attributes() {
            let writers = self.matrix.writers_of(attr).unwrap_or_default();
            let covered = sm.signatures.iter().enumerate().any(|(i, s)| {
                verified[i] && s.covers(attr) && signer_roles[i].is_some_and(|r| writers.contains(&r))
            });
            if !covered {
                findings.push(Finding::reject(
                    FindingCode::WriteCoverageGap,
                    attr,
                    "no verified signature by a role with write permission",
                ));
            }
        }

        // A signature that verified earlier but fails here was moved onto
        // different values; name the attributes whose binding changed.
        for (i, sig) in sm.signatures.iter().enumerate() {
            if verified[i] {
                continue;
            }
            let Some(earlier) = self.store.iter().find(|r| r.verified && r.signature == *sig) else {
                continue;
            };
            for (k, attr) in sig.attrs.iter().enumerate() {
                let Some(value) = msg.get(attr) else { continue };
                let shared = sm.signatures.iter().filter(|s| s.covers(attr)).count() >= 2;
                if shared && earlier.digests[k] != value.digest() {
                    findings.push(Finding::reject(
                        FindingCode::LinkageMismatch,
                        attr,
                        format!(
                            "{} signed {} in {}, message carries {}",
                            sig.signer,
                            earlier.digests[k].to_hex(),
                            earlier.instance_id,
                            value.digest().to_hex()
                        ),
                    ));
                }
            }
        }
        for (attr, value) in msg.fields() {
            let readable = self.matrix.allows(self.role, attr, Action::Read);
            match value {
                FieldValue::Plain(_) if !readable => findings.push(Finding::reject(
                    FindingCode::RepresentationViolation,
                    attr,
                    "plaintext sent to a reader without read permission",
                )),
                FieldValue::Sealed(s) => {
                    let mine = s.wrapped_keys.contains_key(&self.identity);
                    if readable && !mine {
                        findings.push(Finding::reject(
                            FindingCode::RepresentationViolation,
                            attr,
                            "sealed without a key for an authorized reader",
                        ));
                    }
                    if !readable && mine {
                        findings.push(Finding::reject(
                            FindingCode::RepresentationViolation,
                            attr,
                            "key wrapped for a reader without read permission",
                        ));
                    }
                    for reader in s.wrapped_keys.keys().filter(|r| **r != self.identity) {
                        let allowed = trust
                            .role_of(reader)
                            .is_some_and(|r| self.matrix.allows(r, attr, Action::Read));
                        if !allowed {
                            findings.push(Finding::reject(
                                FindingCode::RepresentationViolation,
                                attr,
                                format!("key wrapped for {reader}, who may not read"),
                            ));
                        }
                    }
                }
                _ => {}
            }
        }

        if let Some(b_no) = msg.get(&AttributeId::B_NO) {
            let d = b_no.digest();
            match self.seen_booking_numbers.get(&d) {
                Some(prev) if *prev != msg.instance_id => {
                    let detail = format!("booking number already used by {prev}");
                    findings.push(match self.nonce_policy {
                        NoncePolicy::Warn => Finding::warning(FindingCode::NonceReuse, AttributeId::B_NO, detail),
                        NoncePolicy::Reject => Finding::reject(FindingCode::NonceReuse, AttributeId::B_NO, detail),
                    });
                }
                Some(_) => {}
                None => {
                    self.seen_booking_numbers.insert(d, msg.instance_id.clone());
                }
            }
        }

        let mut view = BTreeMap::new();
        for (attr, value) in msg.fields() {
            if !self.matrix.allows(self.role, attr, Action::Read) {
                continue;
            }
            match value {
                FieldValue::Plain(text) => {
                    view.insert(attr.clone(), text.clone());
                }
                FieldValue::Sealed(s) if s.wrapped_keys.contains_key(&self.identity) => {
                    match open_field(s, &self.identity, &self.key) {
                        Ok(text) => {
                            view.insert(attr.clone(), text);
                        }
                        Err(CryptoError::DigestMismatch) => findings.push(Finding::reject(
                            FindingCode::DigestMismatch,
                            attr,
                            "decrypted value does not match its digest",
                        )),
                        Err(e) => findings.push(Finding::reject(FindingCode::DecryptFailure, attr, e.to_string())),
                    }
                }
                _ => {}
            }
        }

        self.record_message(sm, Direction::Inbound, &sm.sender, trust.now, &verified);

        let report = ValidationReport {
            verdict: Verdict::Accept,
            receiver: self.identity.clone(),
            instance_id: msg.instance_id.clone(),
            msg_type: msg.msg_type,
            message_digest: digest(&to_flat(sm)),
            findings,
            decrypted_view: view,
        }
        .conclude();
        if report.accepted() {
            for (attr, text) in &report.decrypted_view {
                self.remember(attr, text);
            }
        }
        report
    }

    /// Passes accepted content on. Sealed values travel unchanged, carried
    /// signatures are kept when all their attributes are selected, and the
    /// forwarder signs only what `spec` has it author or attest.
    pub fn forward(
        &mut self,
        report: &ValidationReport,
        original: &SecuredMessage,
        spec: &ForwardSpec,
        route: &Route,
        trust: &TrustContext,
    ) -> Result<SecuredMessage, AdapterError> {
        if !report.accepted()
            || report.receiver != self.identity
            || report.message_digest != digest(&to_flat(original))
        {
            return Err(AdapterError::NotValidated);
        }
        let mut fields = Vec::with_capacity(spec.select.len() + spec.added.len());
        for attr in &spec.select {
            let value = original
                .message
                .get(attr)
                .ok_or_else(|| AdapterError::MissingValue(attr.clone()))?;
            fields.push((attr.clone(), value.clone()));
        }
        for (attr, text) in &spec.added {
            fields.push((attr.clone(), FieldValue::Plain(text.clone())));
        }
        let msg = Message::new(spec.msg_type, original.message.instance_id.clone(), fields)?;
        let carried: Vec<AttributeSignature> = original
            .signatures
            .iter()
            .filter(|s| s.attrs.iter().all(|a| spec.select.contains(a)))
            .cloned()
            .collect();
        let mut attest = spec.attest.clone();
        attest.extend(spec.added.iter().map(|(a, _)| a.clone()));
        self.secure_outbound_attesting(&msg, &carried, Some(&attest), route, trust)
    }
}
