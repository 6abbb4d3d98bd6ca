use std::collections::{BTreeMap, BTreeSet};

use crate::flat::from_flat;
use crate::message::{ActorId, AttributeId};
use crate::policy::{AccessMatrix, Action, Role};

use super::transcript::{Event, Transcript};

/// Plaintext every actor got to see in one run, checked against the read
/// permissions of its role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub views: BTreeMap<ActorId, (Role, BTreeSet<AttributeId>)>,
    /// One line per attribute seen without read permission.
    pub flags: Vec<String>,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (actor, (role, attrs)) in &self.views {
            let attrs: Vec<&str> = attrs.iter().map(AttributeId::as_str).collect();
            out.push_str(&format!("{actor} ({role}): {}\n", attrs.join(", ")));
        }
        if self.flags.is_empty() {
            out.push_str("no violations\n");
        }
        for f in &self.flags {
            out.push_str(&format!("VIOLATION {f}\n"));
        }
        out
    }
}

fn add(map: &mut BTreeMap<ActorId, BTreeSet<AttributeId>>, actor: &ActorId, attrs: impl IntoIterator<Item = AttributeId>) {
    map.entry(actor.clone()).or_default().extend(attrs);
}

/// Attributes whose plaintext each actor held: decrypted views of accepted
/// messages, values it supplied itself, values handed over out of band and
/// container numbers it read from or wrote to the ledger.
fn plaintext_views(t: &Transcript) -> BTreeMap<ActorId, BTreeSet<AttributeId>> {
    let mut views = BTreeMap::new();
    for e in &t.events {
        match e {
            Event::Validated { actor, report, .. } => add(&mut views, actor, report.decrypted_view.keys().cloned()),
            Event::Held { actor, attrs, .. } => add(&mut views, actor, attrs.iter().cloned()),
            Event::Author { signer, to, attrs, .. } => {
                add(&mut views, signer, attrs.iter().cloned());
                add(&mut views, to, attrs.iter().cloned());
            }
            Event::Ledger {
                invoker, endorser, ..
            } => {
                add(&mut views, invoker, [AttributeId::CNT_NO]);
                add(&mut views, endorser, [AttributeId::CNT_NO]);
            }
            Event::Query { actor, outcome: Ok(_), .. } => add(&mut views, actor, [AttributeId::CNT_NO]),
            _ => {}
        }
    }
    views
}

pub fn audit_views(t: &Transcript, matrix: &AccessMatrix) -> AuditReport {
    let roles: BTreeMap<&ActorId, Role> = t.actors().collect();
    let mut report = AuditReport {
        views: BTreeMap::new(),
        flags: Vec::new(),
    };
    for (actor, attrs) in plaintext_views(t) {
        let Some(role) = roles.get(&actor).copied() else {
            report.flags.push(format!("{actor} is not a listed actor"));
            continue;
        };
        for attr in &attrs {
            if !matrix.allows(role, attr, Action::Read) {
                report.flags.push(format!("{actor} ({role}) saw {attr}"));
            }
        }
        report.views.insert(actor, (role, attrs));
    }
    for (actor, role) in roles {
        report.views.entry(actor.clone()).or_insert((role, BTreeSet::new()));
    }
    report
}

/// Attributes present, in any representation, in what each actor sent or
/// received, including out-of-band hand-overs and ledger transactions.
pub fn exposure(t: &Transcript) -> BTreeMap<ActorId, BTreeSet<AttributeId>> {
    let mut out = BTreeMap::new();
    let mut parties: BTreeMap<usize, (ActorId, ActorId)> = BTreeMap::new();
    for e in &t.events {
        match e {
            Event::Step { n, from, to, .. } => {
                parties.insert(*n, (from.clone(), to.clone()));
            }
            Event::Sent { n, bytes } => {
                let (Some((from, to)), Ok(sm)) = (parties.get(n), from_flat(bytes)) else {
                    continue;
                };
                let attrs: Vec<AttributeId> = sm.message.attributes().cloned().collect();
                add(&mut out, from, attrs.iter().cloned());
                add(&mut out, to, attrs);
            }
            Event::Author { signer, to, attrs, .. } => {
                add(&mut out, signer, attrs.iter().cloned());
                add(&mut out, to, attrs.iter().cloned());
            }
            Event::Ledger {
                invoker, endorser, ..
            } => {
                add(&mut out, invoker, [AttributeId::CNT_NO]);
                add(&mut out, endorser, [AttributeId::CNT_NO]);
            }
            Event::Query { actor, outcome: Ok(_), .. } => add(&mut out, actor, [AttributeId::CNT_NO]),
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_scenario, Fixtures, Mode, Scenario};

    #[test]
    fn honest_views_are_exactly_the_readable_exposure() {
        let matrix = AccessMatrix::default_policy();
        for dg in [false, true] {
            let mut fx = Fixtures::default_fixtures();
            fx.dg = dg;
            for scenario in Scenario::ALL {
                for mode in Mode::ALL {
                    let (_, t) = run_scenario(&fx, scenario, mode).unwrap();
                    let audit = audit_views(&t, &matrix);
                    assert!(audit.clean(), "{}", audit.to_text());
                    let exp = exposure(&t);
                    for (actor, (role, view)) in &audit.views {
                        let readable: BTreeSet<AttributeId> = exp
                            .get(actor)
                            .into_iter()
                            .flatten()
                            .filter(|a| matrix.allows(*role, a, Action::Read))
                            .cloned()
                            .collect();
                        assert_eq!(view, &readable, "{scenario} {mode} dg={dg} {actor}");
                    }
                }
            }
        }
    }

    #[test]
    fn leaked_plaintext_is_flagged() {
        let matrix = AccessMatrix::default_policy();
        let (_, mut t) = run_scenario(&Fixtures::default_fixtures(), Scenario::Import, Mode::P2p).unwrap();
        let terminal = t
            .actors()
            .find(|(_, r)| *r == Role::Terminal)
            .map(|(a, _)| a.clone())
            .unwrap();
        t.push(Event::Held {
            n: 99,
            actor: terminal,
            attrs: vec![AttributeId::CSG_DATA],
        });
        let audit = audit_views(&t, &matrix);
        assert!(!audit.clean());
        assert!(audit.flags[0].contains("CSG_DATA"));
    }
}
