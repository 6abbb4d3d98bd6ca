//! The global access-control matrix and per-message protection plans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::message::AttributeId;

/// The shipped policy document.
pub const DEFAULT_POLICY: &str = include_str!("../policy/default.policy");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy line {line}: {reason}")]
    PolicyParseError { line: usize, reason: String },
    #[error("policy has no entry for {role} on {attr}")]
    MissingEntry { role: Role, attr: AttributeId },
    #[error("no role may write {0}")]
    NoWriterForAttribute(AttributeId),
    #[error("no entry for {role} on {attr}")]
    UnknownEntry { role: Role, attr: AttributeId },
    #[error("unknown attribute {0}")]
    UnknownAttribute(AttributeId),
    #[error("{role} may not hold the plaintext of {attr}")]
    SenderCannotRead { role: Role, attr: AttributeId },
    #[error("unknown role {0:?}")]
    UnknownRole(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Importer,
    ShippingLine,
    Pcs,
    Terminal,
    Customs,
    PortAuthority,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Importer,
        Role::ShippingLine,
        Role::Pcs,
        Role::Terminal,
        Role::Customs,
        Role::PortAuthority,
    ];

    /// Rows of the global table.
    pub const CORE: [Role; 5] = [
        Role::Importer,
        Role::ShippingLine,
        Role::Pcs,
        Role::Terminal,
        Role::Customs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Importer => "IMPORTER",
            Role::ShippingLine => "SHIPPING_LINE",
            Role::Pcs => "PCS",
            Role::Terminal => "TERMINAL",
            Role::Customs => "CUSTOMS",
            Role::PortAuthority => "PORT_AUTHORITY",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| PolicyError::UnknownRole(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Permission {
    None,
    Read,
    ReadWrite,
}

impl Permission {
    pub fn as_str(self) -> &'static str {
        match self {
            Permission::None => "-",
            Permission::Read => "R",
            Permission::ReadWrite => "RW",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Read,
    Write,
}

impl FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "read" => Ok(Action::Read),
            "write" => Ok(Action::Write),
            _ => Err(format!("unknown action {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessMatrix {
    entries: BTreeMap<(Role, AttributeId), Permission>,
}

impl AccessMatrix {
    /// The shipped default policy.
    pub fn default_policy() -> Self {
        load_policy(DEFAULT_POLICY.as_bytes()).expect("shipped policy is valid")
    }

    pub fn permission(&self, role: Role, attr: &AttributeId) -> Result<Permission, PolicyError> {
        self.entries
            .get(&(role, attr.clone()))
            .copied()
            .ok_or_else(|| PolicyError::UnknownEntry {
                role,
                attr: attr.clone(),
            })
    }

    pub fn check(&self, role: Role, attr: &AttributeId, action: Action) -> Result<bool, PolicyError> {
        let p = self.permission(role, attr)?;
        Ok(match action {
            Action::Read => p != Permission::None,
            Action::Write => p == Permission::ReadWrite,
        })
    }

    /// `check` for callers that treat a missing entry as no permission.
    pub fn allows(&self, role: Role, attr: &AttributeId, action: Action) -> bool {
        self.check(role, attr, action).unwrap_or(false)
    }

    pub fn knows(&self, attr: &AttributeId) -> bool {
        self.entries.keys().any(|(_, a)| a == attr)
    }

    pub fn attributes(&self) -> BTreeSet<AttributeId> {
        self.entries.keys().map(|(_, a)| a.clone()).collect()
    }

    pub fn writers_of(&self, attr: &AttributeId) -> Result<BTreeSet<Role>, PolicyError> {
        self.roles_with(attr, Permission::ReadWrite)
    }

    pub fn readers_of(&self, attr: &AttributeId) -> Result<BTreeSet<Role>, PolicyError> {
        self.roles_with(attr, Permission::Read)
    }

    fn roles_with(&self, attr: &AttributeId, min: Permission) -> Result<BTreeSet<Role>, PolicyError> {
        if !self.knows(attr) {
            return Err(PolicyError::UnknownAttribute(attr.clone()));
        }
        Ok(self
            .entries
            .iter()
            .filter(|((_, a), p)| a == attr && **p >= min)
            .map(|((r, _), _)| *r)
            .collect())
    }

    /// Attributes a role may read: its read column.
    pub fn read_column(&self, role: Role) -> BTreeSet<AttributeId> {
        self.entries
            .iter()
            .filter(|((r, _), p)| *r == role && **p != Permission::None)
            .map(|((_, a), _)| a.clone())
            .collect()
    }

    /// Serializes back to the policy file format in canonical order.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|((r, a), p)| format!("{r} {a} {}\n", p.as_str()))
            .collect()
    }
}

pub fn load_policy(document: &[u8]) -> Result<AccessMatrix, PolicyError> {
    let text = std::str::from_utf8(document).map_err(|_| PolicyError::PolicyParseError {
        line: 0,
        reason: "not UTF-8".into(),
    })?;
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |reason: String| PolicyError::PolicyParseError { line, reason };
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let [role, attr, perm] = tokens[..] else {
            return Err(err(format!("expected 3 tokens, found {}", tokens.len())));
        };
        let role: Role = role.parse().map_err(|e: PolicyError| err(e.to_string()))?;
        let attr = AttributeId::new(attr).map_err(|e| err(e.to_string()))?;
        let perm = match perm {
            "-" => Permission::None,
            "R" => Permission::Read,
            "RW" => Permission::ReadWrite,
            other => return Err(err(format!("unknown permission {other:?}"))),
        };
        if let Some(prev) = entries.insert((role, attr.clone()), perm) {
            if prev != perm {
                return Err(err(format!("conflicting entries for {role} {attr}")));
            }
        }
    }
    for role in Role::CORE {
        for attr in AttributeId::CORE {
            if !entries.contains_key(&(role, attr.clone())) {
                return Err(PolicyError::MissingEntry { role, attr });
            }
        }
    }
    let matrix = AccessMatrix { entries };
    for attr in matrix.attributes() {
        if matrix.writers_of(&attr)?.is_empty() {
            return Err(PolicyError::NoWriterForAttribute(attr));
        }
    }
    Ok(matrix)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Representation {
    Plain,
    HashOnly,
    Sealed(BTreeSet<Role>),
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Representation::Plain => f.write_str("PLAIN"),
            Representation::HashOnly => f.write_str("HASH_ONLY"),
            Representation::Sealed(readers) => {
                let names: Vec<&str> = readers.iter().map(|r| r.as_str()).collect();
                write!(f, "SEALED({})", names.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectionPlan {
    pub representations: Vec<(AttributeId, Representation)>,
    pub required_writer_roles: BTreeMap<AttributeId, BTreeSet<Role>>,
    /// Signatures the sender must carry from others: (writer role, reason).
    pub carried_signature_requirements: BTreeSet<(Role, String)>,
}

impl ProtectionPlan {
    pub fn representation(&self, attr: &AttributeId) -> Option<&Representation> {
        self.representations.iter().find(|(a, _)| a == attr).map(|(_, r)| r)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (attr, repr) in &self.representations {
            let writers: Vec<&str> = self.required_writer_roles[attr].iter().map(|r| r.as_str()).collect();
            out.push_str(&format!("{attr} {repr} writers={}\n", writers.join(",")));
        }
        for (role, reason) in &self.carried_signature_requirements {
            out.push_str(&format!("carry {role} {reason}\n"));
        }
        out
    }
}

/// Chooses each attribute's wire form for `receiver`: plaintext if the
/// receiver may read it, otherwise sealed for the downstream readers, and
/// only the digest when nobody further on may read it.
pub fn protection_plan(
    matrix: &AccessMatrix,
    sender: Role,
    receiver: Role,
    downstream: &BTreeSet<Role>,
    attributes: &[AttributeId],
) -> Result<ProtectionPlan, PolicyError> {
    let mut representations = Vec::with_capacity(attributes.len());
    let mut required_writer_roles = BTreeMap::new();
    let mut carried = BTreeSet::new();
    for attr in attributes {
        let writers = matrix.writers_of(attr)?;
        let repr = if matrix.check(receiver, attr, Action::Read)? {
            Representation::Plain
        } else {
            let readers: BTreeSet<Role> = downstream
                .iter()
                .copied()
                .filter(|r| *r != receiver && matrix.allows(*r, attr, Action::Read))
                .collect();
            if readers.is_empty() {
                Representation::HashOnly
            } else {
                Representation::Sealed(readers)
            }
        };
        if !writers.contains(&sender) {
            for w in &writers {
                carried.insert((*w, format!("write coverage of {attr}")));
            }
        }
        representations.push((attr.clone(), repr));
        required_writer_roles.insert(attr.clone(), writers);
    }
    Ok(ProtectionPlan {
        representations,
        required_writer_roles,
        carried_signature_requirements: carried,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(roles: &[Role]) -> BTreeSet<Role> {
        roles.iter().copied().collect()
    }

    #[test]
    fn default_policy_reproduces_core_table() {
        let m = AccessMatrix::default_policy();
        use Permission::*;
        let table: [(Role, [Permission; 6]); 5] = [
            (Role::Importer, [Read, Read, ReadWrite, ReadWrite, ReadWrite, Read]),
            (Role::ShippingLine, [ReadWrite, ReadWrite, Read, ReadWrite, Read, ReadWrite]),
            (Role::Pcs, [Read, Read, None, Read, None, Read]),
            (Role::Terminal, [Read, Read, None, Read, None, Read]),
            (Role::Customs, [None, Read, Read, Read, Read, Read]),
        ];
        for (role, row) in table {
            for (attr, p) in AttributeId::CORE.iter().zip(row) {
                assert_eq!(m.permission(role, attr).unwrap(), p, "{role} {attr}");
            }
        }
        assert_eq!(m.permission(Role::Pcs, &AttributeId::CNT_C).unwrap(), None);
        assert_eq!(m.permission(Role::Importer, &AttributeId::CNT_C).unwrap(), ReadWrite);
    }

    #[test]
    fn check_examples() {
        let m = AccessMatrix::default_policy();
        assert!(!m.check(Role::Pcs, &AttributeId::CNT_C, Action::Read).unwrap());
        assert!(m.check(Role::ShippingLine, &AttributeId::CNT_W, Action::Write).unwrap());
        assert!(!m.check(Role::Terminal, &AttributeId::B_NO, Action::Write).unwrap());
        assert!(m.check(Role::Terminal, &AttributeId::B_NO, Action::Read).unwrap());
        let unknown = AttributeId::new("VESSEL").unwrap();
        assert!(matches!(
            m.check(Role::Pcs, &unknown, Action::Read),
            Err(PolicyError::UnknownEntry { .. })
        ));
    }

    #[test]
    fn writers_examples() {
        let m = AccessMatrix::default_policy();
        assert_eq!(m.writers_of(&AttributeId::CNT_C).unwrap(), set(&[Role::Importer]));
        assert_eq!(
            m.writers_of(&AttributeId::CNT_W).unwrap(),
            set(&[Role::Importer, Role::ShippingLine])
        );
        assert_eq!(m.writers_of(&AttributeId::B_NO).unwrap(), set(&[Role::ShippingLine]));
        assert_eq!(
            m.writers_of(&AttributeId::new("VESSEL").unwrap()),
            Err(PolicyError::UnknownAttribute(AttributeId::new("VESSEL").unwrap()))
        );
    }

    #[test]
    fn extension_rows() {
        let m = AccessMatrix::default_policy();
        assert_eq!(m.writers_of(&AttributeId::DG).unwrap(), set(&[Role::Importer]));
        assert_eq!(m.readers_of(&AttributeId::DG).unwrap().len(), 6);
        assert_eq!(
            m.readers_of(&AttributeId::CNT_LOC).unwrap(),
            set(&[Role::Pcs, Role::Terminal, Role::PortAuthority])
        );
        for attr in [AttributeId::ATB_NO, AttributeId::CLR] {
            assert_eq!(m.writers_of(&attr).unwrap(), set(&[Role::Customs]));
            assert_eq!(
                m.readers_of(&attr).unwrap(),
                set(&[Role::ShippingLine, Role::Pcs, Role::Terminal, Role::Customs])
            );
        }
        assert_eq!(m.read_column(Role::PortAuthority), [AttributeId::CNT_NO, AttributeId::DG, AttributeId::CNT_LOC].into_iter().collect());
    }

    #[test]
    fn missing_customs_row() {
        let doc: String = DEFAULT_POLICY
            .lines()
            .filter(|l| !l.starts_with("CUSTOMS"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(
            load_policy(doc.as_bytes()),
            Err(PolicyError::MissingEntry {
                role: Role::Customs,
                attr: AttributeId::B_NO
            })
        );
    }

    #[test]
    fn no_writer_for_weight() {
        let doc = DEFAULT_POLICY
            .replace("IMPORTER        CNT_W     RW", "IMPORTER CNT_W R")
            .replace("SHIPPING_LINE   CNT_W     RW", "SHIPPING_LINE CNT_W R");
        assert_eq!(
            load_policy(doc.as_bytes()),
            Err(PolicyError::NoWriterForAttribute(AttributeId::CNT_W))
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = load_policy(b"# c\nPCS CNT_C\n").unwrap_err();
        assert!(matches!(err, PolicyError::PolicyParseError { line: 2, .. }));
        let err = load_policy(b"PCS CNT_C W\n").unwrap_err();
        assert!(matches!(err, PolicyError::PolicyParseError { line: 1, .. }));
        let err = load_policy(b"FORWARDER CNT_C R\n").unwrap_err();
        assert!(matches!(err, PolicyError::PolicyParseError { line: 1, .. }));
    }

    #[test]
    fn order_insensitive() {
        let mut lines: Vec<&str> = DEFAULT_POLICY.lines().collect();
        lines.reverse();
        let m = load_policy(lines.join("\n").as_bytes()).unwrap();
        assert_eq!(m, AccessMatrix::default_policy());
        assert_eq!(load_policy(m.to_text().as_bytes()).unwrap(), m);
    }

    #[test]
    fn iftmcs_plan_seals_importer_data_for_customs() {
        let m = AccessMatrix::default_policy();
        let attrs = [
            AttributeId::B_NO,
            AttributeId::BL_NO,
            AttributeId::CNT_W,
            AttributeId::CNT_NO,
            AttributeId::CNT_C,
            AttributeId::CSG_DATA,
        ];
        let plan = protection_plan(&m, Role::ShippingLine, Role::Pcs, &set(&[Role::Customs]), &attrs).unwrap();
        let sealed = Representation::Sealed(set(&[Role::Customs]));
        let expected = [
            Representation::Plain,
            Representation::Plain,
            Representation::Plain,
            Representation::Plain,
            sealed.clone(),
            sealed,
        ];
        for (attr, repr) in attrs.iter().zip(expected) {
            assert_eq!(plan.representation(attr), Some(&repr), "{attr}");
        }
        assert!(plan
            .carried_signature_requirements
            .contains(&(Role::Importer, "write coverage of CNT_C".into())));
    }

    #[test]
    fn manifest_plan_hashes_booking_number() {
        let m = AccessMatrix::default_policy();
        let plan = protection_plan(&m, Role::Pcs, Role::Customs, &BTreeSet::new(), &AttributeId::CORE).unwrap();
        for (attr, repr) in &plan.representations {
            let expected = if *attr == AttributeId::B_NO {
                Representation::HashOnly
            } else {
                Representation::Plain
            };
            assert_eq!(*repr, expected, "{attr}");
        }
    }

    #[test]
    fn full_reader_gets_plaintext() {
        let m = AccessMatrix::default_policy();
        let plan = protection_plan(&m, Role::Importer, Role::ShippingLine, &BTreeSet::new(), &AttributeId::CORE).unwrap();
        assert!(plan.representations.iter().all(|(_, r)| *r == Representation::Plain));
    }

    fn role_strategy() -> impl Strategy<Value = Role> {
        prop::sample::select(Role::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn plan_soundness_and_completeness(
            sender in role_strategy(),
            receiver in role_strategy(),
            downstream in prop::collection::btree_set(role_strategy(), 0..6),
            attrs in prop::sample::subsequence(
                AttributeId::CORE.iter().chain(AttributeId::EXTENSION.iter()).cloned().collect::<Vec<_>>(), 0..10),
        ) {
            let m = AccessMatrix::default_policy();
            let plan = protection_plan(&m, sender, receiver, &downstream, &attrs).unwrap();
            for (attr, repr) in &plan.representations {
                let recoverers: BTreeSet<Role> = match repr {
                    Representation::Plain => set(&[receiver]),
                    Representation::HashOnly => BTreeSet::new(),
                    Representation::Sealed(r) => r.clone(),
                };
                for r in &recoverers {
                    prop_assert!(m.check(*r, attr, Action::Read).unwrap());
                }
                if let Representation::Sealed(r) = repr {
                    prop_assert!(!r.contains(&receiver));
                    prop_assert!(!r.is_empty());
                }
                let authorized = m.check(receiver, attr, Action::Read).unwrap()
                    || downstream.iter().any(|r| m.check(*r, attr, Action::Read).unwrap());
                prop_assert_eq!(*repr == Representation::HashOnly, !authorized);
                prop_assert_eq!(&plan.required_writer_roles[attr], &m.writers_of(attr).unwrap());
            }
            let again = protection_plan(&m, sender, receiver, &downstream, &attrs).unwrap();
            prop_assert_eq!(plan.to_text(), again.to_text());
        }

        #[test]
        fn writers_agree_with_check(role in role_strategy(), idx in 0usize..10) {
            let m = AccessMatrix::default_policy();
            let attr = AttributeId::CORE.iter().chain(AttributeId::EXTENSION.iter()).nth(idx).unwrap().clone();
            prop_assert_eq!(
                m.writers_of(&attr).unwrap().contains(&role),
                m.check(role, &attr, Action::Write).unwrap()
            );
        }
    }
}
