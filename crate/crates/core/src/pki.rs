//! Root CA, per-organization intermediates, role-bearing leaves and chain
//! validation with revocation by direct CA lookup.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::crypto::{KeyPair, PublicKey};
use crate::message::ActorId;
use crate::policy::Role;
use crate::segment::{self, encode_b64, ParseError, Writer};

/// Logical time, advanced by the simulator.
pub type Timestamp = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Validity {
    pub not_before: Timestamp,
    pub not_after: Timestamp,
}

impl Validity {
    pub fn new(not_before: Timestamp, not_after: Timestamp) -> Self {
        Validity {
            not_before,
            not_after,
        }
    }

    pub fn contains(&self, at: Timestamp) -> bool {
        self.not_before <= at && at <= self.not_after
    }

    pub fn covers(&self, inner: &Validity) -> bool {
        self.not_before <= inner.not_before && inner.not_after <= self.not_after
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PkiError {
    #[error("requested validity lies outside the issuer's")]
    ValidityOutsideIssuer,
    #[error("unknown serial {0}")]
    UnknownSerial(u64),
    #[error("malformed certificate record: {0}")]
    Record(#[from] ParseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainFailure {
    BrokenSignature,
    UntrustedRoot,
    Revoked,
    Expired,
    /// Issuer links, roles or organizations do not fit together.
    Malformed,
}

impl ChainFailure {
    pub fn as_str(self) -> &'static str {
        match self {
            ChainFailure::BrokenSignature => "BrokenSignature",
            ChainFailure::UntrustedRoot => "UntrustedRoot",
            ChainFailure::Revoked => "Revoked",
            ChainFailure::Expired => "Expired",
            ChainFailure::Malformed => "Malformed",
        }
    }
}

impl fmt::Display for ChainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub serial: u64,
    pub subject: ActorId,
    pub org: String,
    /// Absent only on the root.
    pub role: Option<Role>,
    pub public_key: PublicKey,
    pub issuer: ActorId,
    pub validity: Validity,
    pub signature: Vec<u8>,
}

fn role_token(role: Option<Role>) -> &'static str {
    role.map_or("-", Role::as_str)
}

impl Certificate {
    fn body_elements(&self) -> Vec<String> {
        vec![
            self.serial.to_string(),
            self.subject.to_string(),
            self.org.clone(),
            role_token(self.role).to_owned(),
            self.issuer.to_string(),
            self.validity.not_before.to_string(),
            self.validity.not_after.to_string(),
            encode_b64(self.public_key.as_bytes()),
        ]
    }

    /// Bytes covered by the issuer's signature.
    pub fn body_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.segment("CERT", &self.body_elements());
        w.finish().into_bytes()
    }

    pub fn verify_signature(&self, issuer_key: &PublicKey) -> bool {
        issuer_key.verify(&self.body_bytes(), &self.signature)
    }

    pub fn is_self_signed(&self) -> bool {
        self.subject == self.issuer && self.verify_signature(&self.public_key)
    }

    pub fn write_record(&self, w: &mut Writer) {
        let mut elements = self.body_elements();
        elements.push(encode_b64(&self.signature));
        w.segment("CERT", &elements);
    }

    pub fn to_record(&self) -> String {
        let mut w = Writer::new();
        self.write_record(&mut w);
        w.finish()
    }

    pub fn from_segment(seg: &segment::Segment) -> Result<Self, ParseError> {
        if seg.tag != "CERT" {
            return Err(ParseError::new(seg.offset, format!("expected CERT, found {}", seg.tag)));
        }
        seg.expect_len(9)?;
        let bad = |i: usize, what: &str| ParseError::new(seg.offset, format!("element {i}: {what}"));
        let subject = ActorId::new(seg.element(1)?).map_err(|e| bad(1, &e.to_string()))?;
        let role = match seg.element(3)? {
            "-" => None,
            r => Some(r.parse::<Role>().map_err(|e| bad(3, &e.to_string()))?),
        };
        let issuer = ActorId::new(seg.element(4)?).map_err(|e| bad(4, &e.to_string()))?;
        let public_key = PublicKey::from_bytes(&seg.base64(7)?).map_err(|e| bad(7, &e.to_string()))?;
        Ok(Certificate {
            serial: seg.number(0)?,
            subject,
            org: seg.element(2)?.to_owned(),
            role,
            public_key,
            issuer,
            validity: Validity::new(seg.number(5)?, seg.number(6)?),
            signature: seg.base64(8)?,
        })
    }

    pub fn from_record(text: &str) -> Result<Self, ParseError> {
        let segs = segment::parse(text.as_bytes(), true)?;
        match segs.as_slice() {
            [one] => Certificate::from_segment(one),
            _ => Err(ParseError::new(0, "expected exactly one CERT segment")),
        }
    }
}

/// Issuing state of one certificate authority.
#[derive(Debug, Clone)]
pub struct CaState {
    pub key_pair: KeyPair,
    pub certificate: Certificate,
    pub issued: Vec<u64>,
    pub revoked: BTreeSet<u64>,
    pub parent: Option<ActorId>,
    next_serial: u64,
}

impl CaState {
    pub fn name(&self) -> &ActorId {
        &self.certificate.subject
    }

    /// Wraps a certificate issued to this CA by `parent`.
    pub fn subordinate(key_pair: KeyPair, certificate: Certificate) -> Self {
        CaState {
            parent: Some(certificate.issuer.clone()),
            key_pair,
            certificate,
            issued: Vec::new(),
            revoked: BTreeSet::new(),
            next_serial: 1,
        }
    }

    pub fn issue(
        &mut self,
        subject: ActorId,
        org: &str,
        role: Role,
        subject_public_key: PublicKey,
        validity: Validity,
    ) -> Result<Certificate, PkiError> {
        if validity.not_before > validity.not_after || !self.certificate.validity.covers(&validity) {
            return Err(PkiError::ValidityOutsideIssuer);
        }
        let serial = self.next_serial;
        self.next_serial += 1;
        let mut cert = Certificate {
            serial,
            subject,
            org: org.to_owned(),
            role: Some(role),
            public_key: subject_public_key,
            issuer: self.name().clone(),
            validity,
            signature: Vec::new(),
        };
        cert.signature = self.key_pair.sign(&cert.body_bytes());
        self.issued.push(serial);
        Ok(cert)
    }

    pub fn revoke(&mut self, serial: u64) -> Result<(), PkiError> {
        if !self.issued.contains(&serial) {
            return Err(PkiError::UnknownSerial(serial));
        }
        self.revoked.insert(serial);
        Ok(())
    }

    pub fn is_revoked(&self, serial: u64) -> bool {
        self.revoked.contains(&serial)
    }
}

pub fn create_root(name: &str) -> CaState {
    let owner = ActorId::new(name).expect("root name must be a valid identity");
    let key = KeyPair::generate(owner).expect("entropy for root key");
    create_root_with(key, Validity::new(0, Timestamp::MAX))
}

/// Self-signed root over a caller-supplied key.
pub fn create_root_with(key_pair: KeyPair, validity: Validity) -> CaState {
    let name = key_pair.owner.clone();
    let mut cert = Certificate {
        serial: 0,
        subject: name.clone(),
        org: name.to_string(),
        role: None,
        public_key: key_pair.public(),
        issuer: name,
        validity,
        signature: Vec::new(),
    };
    cert.signature = key_pair.sign(&cert.body_bytes());
    CaState {
        key_pair,
        certificate: cert,
        issued: vec![0],
        revoked: BTreeSet::new(),
        parent: None,
        next_serial: 1,
    }
}

/// Answers revocation lookups for certificates by issuer and serial.
pub trait RevocationSource {
    fn is_revoked(&self, issuer: &ActorId, serial: u64) -> bool;
}

/// No certificate is ever revoked.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoRevocation;

impl RevocationSource for NoRevocation {
    fn is_revoked(&self, _: &ActorId, _: u64) -> bool {
        false
    }
}

impl RevocationSource for CaState {
    fn is_revoked(&self, issuer: &ActorId, serial: u64) -> bool {
        issuer == self.name() && self.revoked.contains(&serial)
    }
}

/// All CAs of a hierarchy, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct CaRegistry {
    cas: BTreeMap<ActorId, CaState>,
}

impl CaRegistry {
    pub fn insert(&mut self, ca: CaState) {
        self.cas.insert(ca.name().clone(), ca);
    }

    pub fn get(&self, name: &ActorId) -> Option<&CaState> {
        self.cas.get(name)
    }

    pub fn get_mut(&mut self, name: &ActorId) -> Option<&mut CaState> {
        self.cas.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CaState> {
        self.cas.values()
    }
}

impl RevocationSource for CaRegistry {
    fn is_revoked(&self, issuer: &ActorId, serial: u64) -> bool {
        self.cas.get(issuer).is_some_and(|ca| ca.revoked.contains(&serial))
    }
}

/// Validates `leaf` through `chain` (issuer first, anchor optional at the
/// end) up to `trust_anchor` at logical time `at`.
pub fn validate_chain(
    leaf: &Certificate,
    chain: &[Certificate],
    trust_anchor: &Certificate,
    at: Timestamp,
    revocation: &dyn RevocationSource,
) -> Result<(), ChainFailure> {
    if !trust_anchor.is_self_signed() {
        return Err(ChainFailure::UntrustedRoot);
    }
    let mut links: Vec<&Certificate> = std::iter::once(leaf).chain(chain.iter()).collect();
    if links.len() > 1 && links.last() == Some(&trust_anchor) {
        links.pop();
    }
    for (i, cert) in links.iter().enumerate() {
        let issuer = links.get(i + 1).copied().unwrap_or(trust_anchor);
        if cert.issuer != issuer.subject {
            let top = i + 1 == links.len();
            return Err(if top { ChainFailure::UntrustedRoot } else { ChainFailure::Malformed });
        }
        if cert.is_self_signed() && *cert != trust_anchor {
            return Err(ChainFailure::UntrustedRoot);
        }
        if !cert.verify_signature(&issuer.public_key) {
            return Err(ChainFailure::BrokenSignature);
        }
    }
    if links.iter().any(|c| revocation.is_revoked(&c.issuer, c.serial)) {
        return Err(ChainFailure::Revoked);
    }
    if !links.iter().chain([&trust_anchor]).all(|c| c.validity.contains(at)) {
        return Err(ChainFailure::Expired);
    }
    let Some(role) = leaf.role else {
        return Err(ChainFailure::Malformed);
    };
    for ca in &links[1..] {
        if ca.role != Some(role) || ca.org != leaf.org {
            return Err(ChainFailure::Malformed);
        }
    }
    Ok(())
}

/// What a relying party needs to judge certificates: the trust anchor, the CA
/// states for revocation lookups, a directory of actor chains (leaf first)
/// and the current logical time.
#[derive(Debug, Clone)]
pub struct TrustContext {
    pub anchor: Certificate,
    pub registry: CaRegistry,
    pub now: Timestamp,
    directory: BTreeMap<ActorId, Vec<Certificate>>,
}

impl TrustContext {
    pub fn new(anchor: Certificate, registry: CaRegistry, now: Timestamp) -> Self {
        TrustContext {
            anchor,
            registry,
            now,
            directory: BTreeMap::new(),
        }
    }

    /// Publishes a chain under its leaf subject, replacing any earlier one.
    pub fn register(&mut self, chain: Vec<Certificate>) {
        if let Some(leaf) = chain.first() {
            self.directory.insert(leaf.subject.clone(), chain);
        }
    }

    pub fn chain_of(&self, actor: &ActorId) -> Option<&[Certificate]> {
        self.directory.get(actor).map(Vec::as_slice)
    }

    pub fn validate<'c>(&self, chain: &'c [Certificate]) -> Result<&'c Certificate, ChainFailure> {
        let (leaf, rest) = chain.split_first().ok_or(ChainFailure::Malformed)?;
        validate_chain(leaf, rest, &self.anchor, self.now, &self.registry)?;
        Ok(leaf)
    }

    /// Builds the issuer path of `leaf` from the registry and validates it.
    pub fn validate_leaf(&self, leaf: &Certificate) -> Result<(), ChainFailure> {
        self.validate_leaf_at(leaf, self.now, &self.registry)
    }

    /// Path-building validation at a chosen time and revocation view.
    pub fn validate_leaf_at(
        &self,
        leaf: &Certificate,
        at: Timestamp,
        revocation: &dyn RevocationSource,
    ) -> Result<(), ChainFailure> {
        let chain = self.issuer_path(leaf)?;
        validate_chain(leaf, &chain, &self.anchor, at, revocation)
    }

    fn issuer_path(&self, leaf: &Certificate) -> Result<Vec<Certificate>, ChainFailure> {
        let mut chain = Vec::new();
        let mut issuer = &leaf.issuer;
        while issuer != &self.anchor.subject {
            let ca = self.registry.get(issuer).ok_or(ChainFailure::UntrustedRoot)?;
            if chain.len() > 8 {
                return Err(ChainFailure::Malformed);
            }
            chain.push(ca.certificate.clone());
            issuer = &ca.certificate.issuer;
        }
        Ok(chain)
    }

    /// The validated leaf of a directory entry.
    pub fn certificate_of(&self, actor: &ActorId) -> Result<&Certificate, ChainFailure> {
        let chain = self.chain_of(actor).ok_or(ChainFailure::UntrustedRoot)?;
        let leaf = self.validate(chain)?;
        if &leaf.subject != actor {
            return Err(ChainFailure::Malformed);
        }
        Ok(leaf)
    }

    pub fn public_key(&self, actor: &ActorId) -> Option<PublicKey> {
        self.certificate_of(actor).ok().map(|c| c.public_key)
    }

    pub fn role_of(&self, actor: &ActorId) -> Option<Role> {
        self.certificate_of(actor).ok().and_then(|c| c.role)
    }

    /// Every directory actor holding a valid certificate for `role`.
    pub fn actors_with_role(&self, role: Role) -> Vec<(ActorId, PublicKey)> {
        self.directory
            .keys()
            .filter_map(|a| {
                let c = self.certificate_of(a).ok()?;
                (c.role == Some(role)).then(|| (a.clone(), c.public_key))
            })
            .collect()
    }

    pub fn actors(&self) -> impl Iterator<Item = &ActorId> {
        self.directory.keys()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kp(seed: u8, name: &str) -> KeyPair {
        KeyPair::from_seed([seed; 32], ActorId::new(name).unwrap())
    }

    fn id(name: &str) -> ActorId {
        ActorId::new(name).unwrap()
    }

    struct Hierarchy {
        root: CaState,
        sl1: CaState,
        leaf: Certificate,
    }

    fn hierarchy(root_name: &str, seed: u8) -> Hierarchy {
        let mut root = create_root_with(kp(seed, root_name), Validity::new(0, 1_000_000));
        let sl1_key = kp(seed.wrapping_add(1), "SL1");
        let sl1_cert = root
            .issue(id("SL1"), "SL1", Role::ShippingLine, sl1_key.public(), Validity::new(0, 500_000))
            .unwrap();
        let mut sl1 = CaState::subordinate(sl1_key, sl1_cert);
        let clerk = kp(seed.wrapping_add(2), "sl1-clerk");
        let leaf = sl1
            .issue(id("sl1-clerk"), "SL1", Role::ShippingLine, clerk.public(), Validity::new(0, 100_000))
            .unwrap();
        Hierarchy { root, sl1, leaf }
    }

    fn registry(h: &Hierarchy) -> CaRegistry {
        let mut r = CaRegistry::default();
        r.insert(h.root.clone());
        r.insert(h.sl1.clone());
        r
    }

    #[test]
    fn root_is_self_signed() {
        let root = create_root("PortRoot");
        let c = &root.certificate;
        assert_eq!(c.issuer, c.subject);
        assert_eq!(c.subject.as_str(), "PortRoot");
        assert!(c.verify_signature(&root.key_pair.public()));
        assert!(root.parent.is_none());
    }

    #[test]
    fn mutated_root_fails_self_signature() {
        let root = create_root("PortRoot");
        let mut c = root.certificate.clone();
        c.validity.not_after -= 1;
        assert!(!c.verify_signature(&c.public_key));
        let mut c = root.certificate.clone();
        c.org.push('X');
        assert!(!c.is_self_signed());
    }

    #[test]
    fn three_link_chain_validates() {
        let h = hierarchy("PortRoot", 1);
        let chain = [h.sl1.certificate.clone()];
        assert_eq!(
            validate_chain(&h.leaf, &chain, &h.root.certificate, 10, &registry(&h)),
            Ok(())
        );
        let with_anchor = [h.sl1.certificate.clone(), h.root.certificate.clone()];
        assert_eq!(
            validate_chain(&h.leaf, &with_anchor, &h.root.certificate, 10, &NoRevocation),
            Ok(())
        );
    }

    #[test]
    fn leaf_validity_exceeding_issuer() {
        let mut h = hierarchy("PortRoot", 1);
        let k = kp(9, "x");
        assert_eq!(
            h.sl1.issue(id("x"), "SL1", Role::ShippingLine, k.public(), Validity::new(0, 500_001)),
            Err(PkiError::ValidityOutsideIssuer)
        );
        assert_eq!(
            h.sl1.issue(id("x"), "SL1", Role::ShippingLine, k.public(), Validity::new(5, 4)),
            Err(PkiError::ValidityOutsideIssuer)
        );
    }

    #[test]
    fn serials_are_distinct() {
        let mut h = hierarchy("PortRoot", 1);
        let a = h
            .sl1
            .issue(id("a"), "SL1", Role::ShippingLine, kp(7, "a").public(), Validity::new(0, 10))
            .unwrap();
        let b = h
            .sl1
            .issue(id("b"), "SL1", Role::ShippingLine, kp(8, "b").public(), Validity::new(0, 10))
            .unwrap();
        assert_ne!(a.serial, b.serial);
        assert_ne!(a.serial, h.leaf.serial);
        assert_eq!(h.sl1.issued.len(), 3);
    }

    #[test]
    fn revocation() {
        let mut h = hierarchy("PortRoot", 1);
        let chain = [h.sl1.certificate.clone()];
        h.sl1.revoke(h.leaf.serial).unwrap();
        assert_eq!(
            validate_chain(&h.leaf, &chain, &h.root.certificate, 10, &registry(&h)),
            Err(ChainFailure::Revoked)
        );
        assert_eq!(
            validate_chain(&h.leaf, &chain, &h.root.certificate, 10, &h.sl1),
            Err(ChainFailure::Revoked)
        );
        assert_eq!(h.sl1.revoke(999), Err(PkiError::UnknownSerial(999)));
    }

    #[test]
    fn intermediate_revocation_breaks_leaf() {
        let mut h = hierarchy("PortRoot", 1);
        h.root.revoke(h.sl1.certificate.serial).unwrap();
        let chain = [h.sl1.certificate.clone()];
        assert_eq!(
            validate_chain(&h.leaf, &chain, &h.root.certificate, 10, &registry(&h)),
            Err(ChainFailure::Revoked)
        );
    }

    #[test]
    fn double_revoke_is_single_revoke() {
        let mut once = hierarchy("PortRoot", 1).sl1;
        let serial = once.issued[0];
        once.revoke(serial).unwrap();
        let mut twice = once.clone();
        twice.revoke(serial).unwrap();
        assert_eq!(once.revoked, twice.revoked);
        assert_eq!(once.issued, twice.issued);
    }

    #[test]
    fn foreign_root_is_untrusted() {
        let ours = hierarchy("PortRoot", 1);
        let theirs = hierarchy("RogueRoot", 50);
        // Oracle: each hierarchy validates against its own anchor only.
        for (h, own, other) in [(&ours, &ours.root, &theirs.root), (&theirs, &theirs.root, &ours.root)] {
            let chain = [h.sl1.certificate.clone()];
            assert_eq!(validate_chain(&h.leaf, &chain, &own.certificate, 1, &NoRevocation), Ok(()));
            assert_eq!(
                validate_chain(&h.leaf, &chain, &other.certificate, 1, &NoRevocation),
                Err(ChainFailure::UntrustedRoot)
            );
            let full = [h.sl1.certificate.clone(), own.certificate.clone()];
            assert_eq!(
                validate_chain(&h.leaf, &full, &other.certificate, 1, &NoRevocation),
                Err(ChainFailure::UntrustedRoot)
            );
        }
    }

    #[test]
    fn same_name_different_key_root() {
        let ours = hierarchy("PortRoot", 1);
        let impostor = hierarchy("PortRoot", 60);
        let chain = [impostor.sl1.certificate.clone()];
        assert_eq!(
            validate_chain(&impostor.leaf, &chain, &ours.root.certificate, 1, &NoRevocation),
            Err(ChainFailure::BrokenSignature)
        );
    }

    #[test]
    fn expiry() {
        let h = hierarchy("PortRoot", 1);
        let chain = [h.sl1.certificate.clone()];
        let check = |at| validate_chain(&h.leaf, &chain, &h.root.certificate, at, &NoRevocation);
        assert_eq!(check(100_000), Ok(()));
        assert_eq!(check(100_001), Err(ChainFailure::Expired));
    }

    #[test]
    fn mutated_leaf_breaks_signature() {
        let h = hierarchy("PortRoot", 1);
        let chain = [h.sl1.certificate.clone()];
        let mut leaf = h.leaf.clone();
        leaf.role = Some(Role::Customs);
        assert_eq!(
            validate_chain(&leaf, &chain, &h.root.certificate, 1, &NoRevocation),
            Err(ChainFailure::BrokenSignature)
        );
        let mut leaf = h.leaf.clone();
        leaf.signature[3] ^= 1;
        assert_eq!(
            validate_chain(&leaf, &chain, &h.root.certificate, 1, &NoRevocation),
            Err(ChainFailure::BrokenSignature)
        );
    }

    #[test]
    fn role_must_match_org_ca() {
        let mut h = hierarchy("PortRoot", 1);
        let rogue = h
            .sl1
            .issue(id("sl1-officer"), "SL1", Role::Customs, kp(30, "o").public(), Validity::new(0, 10))
            .unwrap();
        let chain = [h.sl1.certificate.clone()];
        assert_eq!(
            validate_chain(&rogue, &chain, &h.root.certificate, 1, &NoRevocation),
            Err(ChainFailure::Malformed)
        );
    }

    #[test]
    fn record_round_trip() {
        let h = hierarchy("PortRoot", 1);
        for cert in [&h.root.certificate, &h.sl1.certificate, &h.leaf] {
            let text = cert.to_record();
            assert!(text.starts_with("CERT+"));
            let back = Certificate::from_record(&text).unwrap();
            assert_eq!(&back, cert);
        }
        assert!(h.root.certificate.to_record().contains("+-+PortRoot+"));
        assert!(Certificate::from_record("CERT+1+a'").is_err());
    }

    proptest! {
        #[test]
        fn revocation_is_monotone(times in prop::collection::vec(0u64..200_000, 1..20)) {
            let mut h = hierarchy("PortRoot", 1);
            h.sl1.revoke(h.leaf.serial).unwrap();
            let reg = registry(&h);
            let chain = [h.sl1.certificate.clone()];
            for at in times {
                prop_assert!(validate_chain(&h.leaf, &chain, &h.root.certificate, at, &reg).is_err());
            }
        }

        #[test]
        fn any_byte_flip_in_chain_invalidates(which in 0usize..2, idx in 0usize..64) {
            let h = hierarchy("PortRoot", 1);
            let mut leaf = h.leaf.clone();
            let mut inter = h.sl1.certificate.clone();
            let target = if which == 0 { &mut leaf } else { &mut inter };
            target.signature[idx] ^= 0x01;
            prop_assert!(validate_chain(&leaf, &[inter], &h.root.certificate, 1, &NoRevocation).is_err());
        }
    }
}
