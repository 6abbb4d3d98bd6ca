use std::collections::BTreeMap;

use crate::adapter::AdapterState;
use crate::crypto::{digest, KeyPair};
use crate::ledger::{EndorsementPolicy, LedgerNet, NetConfig, Organization};
use crate::message::{ActorId, AttributeId};
use crate::pki::{create_root_with, CaRegistry, CaState, Certificate, TrustContext, Validity};
use crate::policy::{AccessMatrix, Role};
use crate::segment::{self, encode_b64, Segment, Writer};

use super::SimError;

pub const DEFAULT_FIXTURES: &str = include_str!("../../fixtures/default.fix");

pub const ROOT_NAME: &str = "PortRoot";
pub const ROOT_VALIDITY: Validity = Validity {
    not_before: 0,
    not_after: 1_000_000,
};
pub const ORG_VALIDITY: Validity = Validity {
    not_before: 0,
    not_after: 500_000,
};
pub const LEAF_VALIDITY: Validity = Validity {
    not_before: 0,
    not_after: 100_000,
};

/// Values every scenario reads from the fixture data.
pub const REQUIRED_DATA: [AttributeId; 9] = [
    AttributeId::B_NO,
    AttributeId::BL_NO,
    AttributeId::CNT_NO,
    AttributeId::CNT_W,
    AttributeId::CNT_C,
    AttributeId::CSG_DATA,
    AttributeId::CNT_LOC,
    AttributeId::ATB_NO,
    AttributeId::CLR,
];

/// Everything a run needs: key material seed, organizations, actors and
/// container data for a first and a second workflow run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixtures {
    pub name: String,
    pub seed: [u8; 32],
    pub instances: (String, String),
    pub dg: bool,
    pub orgs: Vec<Organization>,
    /// (actor, organization) in issue order.
    pub actors: Vec<(ActorId, String)>,
    pub orderer: (ActorId, String),
    pub data: BTreeMap<AttributeId, String>,
    /// Second-run values; missing entries fall back to `data`.
    pub alt: BTreeMap<AttributeId, String>,
    /// Container location after the move on the terminal.
    pub moved_to: String,
    /// Certificates recorded in the file, checked against the rebuilt PKI.
    pub certificates: Vec<Certificate>,
}

fn parse_err(seg: &Segment, reason: impl Into<String>) -> SimError {
    SimError::Parse(segment::ParseError::new(seg.offset, reason))
}

impl Fixtures {
    pub fn default_fixtures() -> Self {
        Fixtures::parse(DEFAULT_FIXTURES.as_bytes()).expect("shipped fixtures parse")
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, SimError> {
        let segs = segment::parse(bytes, true).map_err(SimError::Parse)?;
        let mut name = None;
        let mut seed = None;
        let mut instances = ("RUN1".to_owned(), "RUN2".to_owned());
        let mut dg = false;
        let mut orgs = Vec::new();
        let mut actors = Vec::new();
        let mut orderer = None;
        let mut data = BTreeMap::new();
        let mut alt = BTreeMap::new();
        let mut moved_to = None;
        let mut certificates = Vec::new();
        for seg in &segs {
            let attr = |i: usize| AttributeId::new(seg.element(i)?).map_err(|e| parse_err(seg, e.to_string()));
            let actor = |i: usize| ActorId::new(seg.element(i)?).map_err(|e| parse_err(seg, e.to_string()));
            match seg.tag.as_str() {
                "FIX" => {
                    seg.expect_len(1)?;
                    name = Some(seg.element(0)?.to_owned());
                }
                "SEED" => {
                    seg.expect_len(1)?;
                    let raw = seg.base64(0)?;
                    seed = Some(<[u8; 32]>::try_from(raw.as_slice()).map_err(|_| parse_err(seg, "seed must be 32 bytes"))?);
                }
                "RUN" => {
                    seg.expect_len(2)?;
                    instances = (seg.element(0)?.to_owned(), seg.element(1)?.to_owned());
                }
                "DG" => {
                    seg.expect_len(1)?;
                    dg = match seg.element(0)? {
                        "true" => true,
                        "false" => false,
                        other => return Err(parse_err(seg, format!("DG must be true or false, got {other:?}"))),
                    };
                }
                "ORG" => {
                    seg.expect_len(2)?;
                    let role: Role = seg.element(1)?.parse().map_err(|e: crate::policy::PolicyError| parse_err(seg, e.to_string()))?;
                    orgs.push(Organization::new(seg.element(0)?, role));
                }
                "ACTOR" => {
                    seg.expect_len(2)?;
                    actors.push((actor(0)?, seg.element(1)?.to_owned()));
                }
                "ORDERER" => {
                    seg.expect_len(2)?;
                    orderer = Some((actor(0)?, seg.element(1)?.to_owned()));
                }
                "DATA" => {
                    seg.expect_len(2)?;
                    data.insert(attr(0)?, seg.element(1)?.to_owned());
                }
                "ALT" => {
                    seg.expect_len(2)?;
                    alt.insert(attr(0)?, seg.element(1)?.to_owned());
                }
                "MOVE" => {
                    seg.expect_len(1)?;
                    moved_to = Some(seg.element(0)?.to_owned());
                }
                "CERT" => certificates.push(Certificate::from_segment(seg)?),
                other => return Err(parse_err(seg, format!("unknown fixture record {other}"))),
            }
        }
        let missing = |what: &str| SimError::FixtureIncomplete(what.to_owned());
        let fx = Fixtures {
            name: name.ok_or_else(|| missing("FIX"))?,
            seed: seed.ok_or_else(|| missing("SEED"))?,
            instances,
            dg,
            orgs,
            actors,
            orderer: orderer.ok_or_else(|| missing("ORDERER"))?,
            data,
            alt,
            moved_to: moved_to.ok_or_else(|| missing("MOVE"))?,
            certificates,
        };
        fx.check()?;
        Ok(fx)
    }

    fn check(&self) -> Result<(), SimError> {
        for attr in &REQUIRED_DATA {
            if !self.data.contains_key(attr) {
                return Err(SimError::FixtureIncomplete(format!("DATA {attr}")));
            }
        }
        for (actor, org) in self.actors.iter().chain([&self.orderer]) {
            if self.org(org).is_none() {
                return Err(SimError::FixtureIncomplete(format!("organization {org} of {actor}")));
            }
        }
        for role in Role::ALL {
            if self.primary(role).is_none() {
                return Err(SimError::FixtureIncomplete(format!("an actor with role {role}")));
            }
        }
        if self.instances.0 == self.instances.1 {
            return Err(SimError::FixtureInvalid("the two run identifiers must differ".into()));
        }
        Ok(())
    }

    pub fn org(&self, name: &str) -> Option<&Organization> {
        self.orgs.iter().find(|o| o.name == name)
    }

    pub fn role_of(&self, actor: &ActorId) -> Option<Role> {
        let (_, org) = self.actors.iter().chain([&self.orderer]).find(|(a, _)| a == actor)?;
        self.org(org).map(|o| o.role)
    }

    /// The first listed actor holding `role`; it plays that role in the
    /// scenarios.
    pub fn primary(&self, role: Role) -> Option<&ActorId> {
        self.actors
            .iter()
            .find(|(_, org)| self.org(org).is_some_and(|o| o.role == role))
            .map(|(a, _)| a)
    }

    /// Data of the first (`false`) or second (`true`) run.
    pub fn values(&self, second: bool) -> BTreeMap<AttributeId, String> {
        let mut values = self.data.clone();
        if second {
            for (attr, v) in &self.alt {
                values.insert(attr.clone(), v.clone());
            }
        }
        values
    }

    pub fn instance(&self, second: bool) -> &str {
        if second {
            &self.instances.1
        } else {
            &self.instances.0
        }
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer::lines();
        w.segment("FIX", &[&self.name]);
        w.segment("SEED", &[encode_b64(&self.seed)]);
        w.segment("RUN", &[&self.instances.0, &self.instances.1]);
        w.segment("DG", &[if self.dg { "true" } else { "false" }]);
        for o in &self.orgs {
            w.segment("ORG", &[o.name.as_str(), o.role.as_str()]);
        }
        for (a, org) in &self.actors {
            w.segment("ACTOR", &[a.as_str(), org]);
        }
        w.segment("ORDERER", &[self.orderer.0.as_str(), &self.orderer.1]);
        for (attr, v) in &self.data {
            w.segment("DATA", &[attr.as_str(), v]);
        }
        w.segment("MOVE", &[&self.moved_to]);
        for (attr, v) in &self.alt {
            w.segment("ALT", &[attr.as_str(), v]);
        }
        for c in &self.certificates {
            c.write_record(&mut w);
        }
        w.finish()
    }

    /// A copy whose CERT records are the certificates this fixture issues.
    pub fn with_certificates(&self) -> Result<Self, SimError> {
        let mut fx = self.clone();
        fx.certificates.clear();
        let world = World::build(&fx)?;
        fx.certificates = world.issued;
        Ok(fx)
    }
}

fn derive_key(seed: &[u8; 32], label: &str) -> KeyPair {
    let mut input = seed.to_vec();
    input.extend_from_slice(label.as_bytes());
    KeyPair::from_seed(*digest(&input).as_bytes(), ActorId::new(label).expect("labels are non-empty"))
}

/// A ready-to-run port: PKI, one adapter per actor and the ledger net.
#[derive(Debug, Clone)]
pub struct World {
    pub fixtures: Fixtures,
    pub trust: TrustContext,
    pub adapters: BTreeMap<ActorId, AdapterState>,
    pub keys: BTreeMap<ActorId, KeyPair>,
    pub leaves: BTreeMap<ActorId, Certificate>,
    pub ledger: LedgerNet,
    /// Every certificate issued while building, root first.
    pub issued: Vec<Certificate>,
}

impl World {
    pub fn build(fx: &Fixtures) -> Result<World, SimError> {
        let setup = |e: String| SimError::Setup(e);
        let root_key = derive_key(&fx.seed, ROOT_NAME);
        let mut root = create_root_with(root_key, ROOT_VALIDITY);
        let mut issued = vec![root.certificate.clone()];
        let mut cas = BTreeMap::new();
        for org in &fx.orgs {
            let key = derive_key(&fx.seed, &org.name);
            let subject = ActorId::new(&org.name).map_err(|e| setup(e.to_string()))?;
            let cert = root
                .issue(subject, &org.name, org.role, key.public(), ORG_VALIDITY)
                .map_err(|e| setup(e.to_string()))?;
            issued.push(cert.clone());
            cas.insert(org.name.clone(), CaState::subordinate(key, cert));
        }
        let mut keys = BTreeMap::new();
        let mut leaves = BTreeMap::new();
        let mut chains = Vec::new();
        for (actor, org) in fx.actors.iter().chain([&fx.orderer]) {
            let ca = cas.get_mut(org).expect("checked on parse");
            let role = fx.org(org).expect("checked on parse").role;
            let key = derive_key(&fx.seed, actor.as_str());
            let cert = ca
                .issue(actor.clone(), org, role, key.public(), LEAF_VALIDITY)
                .map_err(|e| setup(e.to_string()))?;
            issued.push(cert.clone());
            chains.push((actor.clone(), vec![cert.clone(), ca.certificate.clone()]));
            keys.insert(actor.clone(), key);
            leaves.insert(actor.clone(), cert);
        }
        if !fx.certificates.is_empty() && fx.certificates != issued {
            let bad = fx
                .certificates
                .iter()
                .zip(&issued)
                .find(|(a, b)| a != b)
                .map_or_else(|| "certificate count".to_owned(), |(a, _)| a.subject.to_string());
            return Err(SimError::FixtureInvalid(format!("recorded certificate differs: {bad}")));
        }
        let mut registry = CaRegistry::default();
        registry.insert(root.clone());
        for ca in cas.into_values() {
            registry.insert(ca);
        }
        let mut trust = TrustContext::new(root.certificate.clone(), registry, 1);
        let mut adapters = BTreeMap::new();
        for (actor, chain) in chains {
            if actor == fx.orderer.0 {
                continue;
            }
            trust.register(chain.clone());
            let adapter = AdapterState::new(keys[&actor].clone(), chain, AccessMatrix::default_policy())
                .map_err(|e| setup(e.to_string()))?;
            adapters.insert(actor, adapter);
        }
        let config = NetConfig {
            organizations: fx
                .orgs
                .iter()
                .filter(|o| matches!(o.role, Role::ShippingLine | Role::Terminal | Role::Pcs))
                .cloned()
                .collect(),
            policy: EndorsementPolicy::default(),
            trust: trust.clone(),
        };
        let orderer = &fx.orderer.0;
        let ledger = LedgerNet::new(config, keys[orderer].clone(), leaves[orderer].clone())
            .map_err(|e| setup(e.to_string()))?;
        Ok(World {
            fixtures: fx.clone(),
            trust,
            adapters,
            keys,
            leaves,
            ledger,
            issued,
        })
    }

    /// The actor playing `role` in the scenarios.
    pub fn cast(&self, role: Role) -> &ActorId {
        self.fixtures.primary(role).expect("checked on parse")
    }

    pub fn role_of(&self, actor: &ActorId) -> Option<Role> {
        self.fixtures.role_of(actor)
    }

    pub fn org_of(&self, actor: &ActorId) -> Option<&str> {
        self.leaves.get(actor).map(|c| c.org.as_str())
    }

    pub fn adapter(&self, actor: &ActorId) -> &AdapterState {
        &self.adapters[actor]
    }

    /// Applies a revocation to every view of the PKI.
    pub fn revoke(&mut self, actor: &ActorId) -> Result<(), SimError> {
        let cert = self.leaves.get(actor).ok_or_else(|| SimError::Setup(format!("unknown actor {actor}")))?;
        let (issuer, serial) = (cert.issuer.clone(), cert.serial);
        for registry in [&mut self.trust.registry, &mut self.ledger.config.trust.registry] {
            registry
                .get_mut(&issuer)
                .ok_or_else(|| SimError::Setup(format!("unknown issuer {issuer}")))?
                .revoke(serial)
                .map_err(|e| SimError::Setup(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_fixtures_build() {
        let fx = Fixtures::default_fixtures();
        let world = World::build(&fx).unwrap();
        assert_eq!(world.cast(Role::ShippingLine).as_str(), "sl1-clerk");
        assert_eq!(world.cast(Role::Terminal).as_str(), "t1-clerk");
        assert_eq!(world.adapters.len(), fx.actors.len());
        assert!(!world.adapters.contains_key(&fx.orderer.0));
        assert_eq!(world.issued.len(), 1 + fx.orgs.len() + fx.actors.len() + 1);
        for leaf in world.leaves.values() {
            assert_eq!(world.trust.validate_leaf(leaf), Ok(()));
        }
        assert_eq!(world.ledger.config.organizations.len(), 5);
    }

    #[test]
    fn text_round_trip_with_certificates() {
        let fx = Fixtures::default_fixtures().with_certificates().unwrap();
        let text = fx.to_text();
        let back = Fixtures::parse(text.as_bytes()).unwrap();
        assert_eq!(back, fx);
        World::build(&back).unwrap();
        let mut forged = back.clone();
        forged.certificates[3].validity.not_after += 1;
        assert!(matches!(World::build(&forged), Err(SimError::FixtureInvalid(_))));
    }

    #[test]
    fn deterministic_keys() {
        let fx = Fixtures::default_fixtures();
        let a = World::build(&fx).unwrap();
        let b = World::build(&fx).unwrap();
        assert_eq!(a.issued, b.issued);
        let mut other = fx.clone();
        other.seed[0] ^= 1;
        assert!(matches!(World::build(&other), Err(SimError::FixtureInvalid(_))));
        other.certificates.clear();
        assert_ne!(World::build(&other).unwrap().issued, a.issued);
    }

    #[test]
    fn incomplete_fixtures() {
        let text = DEFAULT_FIXTURES.replace("DATA+CNT_C+textiles'\n", "");
        assert_eq!(
            Fixtures::parse(text.as_bytes()),
            Err(SimError::FixtureIncomplete("DATA CNT_C".into()))
        );
        let text = DEFAULT_FIXTURES.replace("ACTOR+customs-officer+CUSTOMS'\n", "");
        assert!(matches!(Fixtures::parse(text.as_bytes()), Err(SimError::FixtureIncomplete(_))));
        let text = DEFAULT_FIXTURES.replace("MOVE+", "MOVX+");
        assert!(matches!(Fixtures::parse(text.as_bytes()), Err(SimError::Parse(_))));
    }

    #[test]
    fn second_run_values() {
        let fx = Fixtures::default_fixtures();
        let v = fx.values(true);
        assert_eq!(v[&AttributeId::B_NO], "BKG-240118");
        assert_eq!(v[&AttributeId::ATB_NO], fx.data[&AttributeId::ATB_NO]);
        assert_eq!(fx.instance(true), "RUN2");
    }

    #[test]
    fn seed_is_not_reused_as_key() {
        let fx = Fixtures::default_fixtures();
        let k = derive_key(&fx.seed, "x");
        assert_ne!(k.public(), KeyPair::from_seed(fx.seed, ActorId::new("x").unwrap()).public());
    }
}
