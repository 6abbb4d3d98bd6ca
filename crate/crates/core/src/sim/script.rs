use std::collections::{BTreeMap, BTreeSet};

use crate::ledger::LedgerAction;
use crate::message::{AttributeId, MsgType};
use crate::policy::Role;

use super::{Fixtures, Mode, Scenario};

/// Values one actor signs and hands to another outside any message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutOfBand {
    pub signer: Role,
    pub to: Role,
    pub fields: Vec<(AttributeId, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Compose {
    /// A new message from plaintext the sender holds, carrying signatures
    /// obtained out of band (indices into the script's preparation list).
    Fresh {
        fields: Vec<(AttributeId, String)>,
        carried: Vec<usize>,
        attest: Option<Vec<AttributeId>>,
    },
    /// A message derived from one the sender accepted at step `source`.
    Forward {
        source: usize,
        select: Vec<AttributeId>,
        added: Vec<(AttributeId, String)>,
        attest: Vec<AttributeId>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageStep {
    pub from: Role,
    pub to: Role,
    pub msg_type: MsgType,
    pub compose: Compose,
    pub downstream: BTreeSet<Role>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerStep {
    pub invoker: Role,
    pub action: LedgerAction,
    pub endorser: Role,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Message(MessageStep),
    Ledger(LedgerStep),
}

impl Step {
    pub fn from(&self) -> Role {
        match self {
            Step::Message(m) => m.from,
            Step::Ledger(l) => l.invoker,
        }
    }

    /// Receiver for messages, endorser for ledger actions.
    pub fn to(&self) -> Role {
        match self {
            Step::Message(m) => m.to,
            Step::Ledger(l) => l.endorser,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Step::Message(m) => m.msg_type.as_str(),
            Step::Ledger(l) => l.action.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioScript {
    pub scenario: Scenario,
    pub mode: Mode,
    pub instance: String,
    pub cnt_no: String,
    pub prep: Vec<OutOfBand>,
    pub steps: Vec<Step>,
}

impl ScenarioScript {
    pub fn message_step(&self, n: usize) -> Option<&MessageStep> {
        match self.steps.get(n) {
            Some(Step::Message(m)) => Some(m),
            _ => None,
        }
    }
}

struct Values(BTreeMap<AttributeId, String>);

impl Values {
    fn get(&self, attr: &AttributeId) -> String {
        self.0.get(attr).cloned().unwrap_or_default()
    }

    fn fields(&self, attrs: &[AttributeId]) -> Vec<(AttributeId, String)> {
        attrs.iter().map(|a| (a.clone(), self.get(a))).collect()
    }
}

fn roles<const N: usize>(r: [Role; N]) -> BTreeSet<Role> {
    r.into_iter().collect()
}

const BOOKING: [AttributeId; 4] = [
    AttributeId::B_NO,
    AttributeId::BL_NO,
    AttributeId::CNT_NO,
    AttributeId::CNT_W,
];

fn message(from: Role, to: Role, msg_type: MsgType, compose: Compose) -> Step {
    Step::Message(MessageStep {
        from,
        to,
        msg_type,
        compose,
        downstream: BTreeSet::new(),
    })
}

fn forward(source: usize, select: &[AttributeId]) -> Compose {
    Compose::Forward {
        source,
        select: select.to_vec(),
        added: Vec::new(),
        attest: Vec::new(),
    }
}

fn export_p2p(fx: &Fixtures, v: &Values) -> (Vec<OutOfBand>, Vec<Step>) {
    use Role::*;
    let prep = vec![OutOfBand {
        signer: ShippingLine,
        to: Terminal,
        fields: v.fields(&BOOKING),
    }];
    let mut at_gate = v.fields(&BOOKING);
    at_gate.push((AttributeId::CNT_LOC, v.get(&AttributeId::CNT_LOC)));
    let mut moved = v.fields(&BOOKING);
    moved.push((AttributeId::CNT_LOC, fx.moved_to.clone()));
    let report = |fields: &Vec<(AttributeId, String)>| Compose::Fresh {
        fields: fields.clone(),
        carried: vec![0],
        attest: Some(vec![AttributeId::CNT_NO, AttributeId::CNT_LOC]),
    };
    let mut steps = vec![
        message(Terminal, Pcs, MsgType::Icu, report(&at_gate)),
        message(Terminal, ShippingLine, MsgType::Codeco, report(&at_gate)),
    ];
    if fx.dg {
        steps.push(message(Terminal, PortAuthority, MsgType::Icu, report(&at_gate)));
    }
    let lcu = steps.len();
    steps.push(message(Terminal, Pcs, MsgType::Lcu, report(&moved)));
    if fx.dg {
        steps.push(message(Terminal, PortAuthority, MsgType::Lcu, report(&moved)));
    }
    let declaration = steps.len();
    steps.push(message(Pcs, Customs, MsgType::Manifest, forward(lcu, &BOOKING)));
    let clearance = steps.len();
    steps.push(message(
        Customs,
        Pcs,
        MsgType::Ifsta,
        Compose::Forward {
            source: declaration,
            select: BOOKING.to_vec(),
            added: vec![(AttributeId::CLR, v.get(&AttributeId::CLR))],
            attest: vec![AttributeId::CNT_NO],
        },
    ));
    let mut status = BOOKING.to_vec();
    status.push(AttributeId::CLR);
    steps.push(message(Pcs, Terminal, MsgType::Ifsta, forward(clearance, &status)));
    steps.push(message(Pcs, ShippingLine, MsgType::Ifsta, forward(clearance, &status)));
    (prep, steps)
}

fn import_p2p(fx: &Fixtures, v: &Values) -> (Vec<OutOfBand>, Vec<Step>) {
    use Role::*;
    let prep = vec![OutOfBand {
        signer: Importer,
        to: ShippingLine,
        fields: v.fields(&[AttributeId::B_NO, AttributeId::CNT_C, AttributeId::CSG_DATA]),
    }];
    let mut manifest = BOOKING.to_vec();
    manifest.extend([AttributeId::CNT_C, AttributeId::CSG_DATA]);
    let mut steps = vec![Step::Message(MessageStep {
        from: ShippingLine,
        to: Pcs,
        msg_type: MsgType::Iftmcs,
        compose: Compose::Fresh {
            fields: v.fields(&manifest),
            carried: vec![0],
            attest: None,
        },
        downstream: roles([Customs]),
    })];
    steps.push(message(Pcs, Terminal, MsgType::PortOrder, forward(0, &BOOKING)));
    if fx.dg {
        steps.push(message(Pcs, PortAuthority, MsgType::PortOrder, forward(0, &BOOKING)));
    }
    let declaration = steps.len();
    steps.push(message(Pcs, Customs, MsgType::Manifest, forward(0, &manifest)));
    let notice = steps.len();
    steps.push(message(
        Customs,
        Pcs,
        MsgType::AtbNotice,
        Compose::Forward {
            source: declaration,
            select: BOOKING.to_vec(),
            added: vec![(AttributeId::ATB_NO, v.get(&AttributeId::ATB_NO))],
            attest: vec![AttributeId::CNT_NO],
        },
    ));
    let mut status = BOOKING.to_vec();
    status.push(AttributeId::ATB_NO);
    steps.push(message(Pcs, Terminal, MsgType::Ifsta, forward(notice, &status)));
    steps.push(message(Pcs, ShippingLine, MsgType::Ifsta, forward(notice, &status)));
    (prep, steps)
}

fn ledger_steps(scenario: Scenario) -> Vec<Step> {
    use LedgerAction::*;
    use Role::*;
    let step = |invoker, action, endorser| Step::Ledger(LedgerStep {
        invoker,
        action,
        endorser,
    });
    let mut steps = vec![
        step(ShippingLine, Create, Terminal),
        step(Terminal, AcknowledgeDelivery, ShippingLine),
        step(Pcs, Clear, Terminal),
    ];
    if scenario == Scenario::Export {
        steps.push(step(Terminal, Load, Pcs));
    }
    steps
}

/// The step list of a scenario for the first (`second == false`) or second
/// workflow run of the fixtures.
pub fn script(fx: &Fixtures, scenario: Scenario, mode: Mode, second: bool) -> ScenarioScript {
    let v = Values(fx.values(second));
    let (prep, steps) = match (mode, scenario) {
        (Mode::P2p, Scenario::Export) => export_p2p(fx, &v),
        (Mode::P2p, Scenario::Import) => import_p2p(fx, &v),
        (Mode::Ledger, s) => (Vec::new(), ledger_steps(s)),
    };
    ScenarioScript {
        scenario,
        mode,
        instance: fx.instance(second).to_owned(),
        cnt_no: v.get(&AttributeId::CNT_NO),
        prep,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(s: &ScenarioScript) -> Vec<(&'static str, Role, Role)> {
        s.steps.iter().map(|st| (st.label(), st.from(), st.to())).collect()
    }

    #[test]
    fn dg_adds_port_authority_copies() {
        let mut fx = Fixtures::default_fixtures();
        let plain = script(&fx, Scenario::Export, Mode::P2p, false);
        fx.dg = true;
        let dg = script(&fx, Scenario::Export, Mode::P2p, false);
        assert_eq!(dg.steps.len(), plain.steps.len() + 2);
        let to_pa: Vec<_> = labels(&dg).into_iter().filter(|l| l.2 == Role::PortAuthority).collect();
        assert_eq!(
            to_pa,
            [("ICU", Role::Terminal, Role::PortAuthority), ("LCU", Role::Terminal, Role::PortAuthority)]
        );
        assert!(labels(&plain).iter().all(|l| l.2 != Role::PortAuthority));
    }

    #[test]
    fn forward_sources_are_received_by_the_forwarder() {
        for dg in [false, true] {
            let mut fx = Fixtures::default_fixtures();
            fx.dg = dg;
            for scenario in Scenario::ALL {
                let s = script(&fx, scenario, Mode::P2p, false);
                for (n, step) in s.steps.iter().enumerate() {
                    if let Step::Message(MessageStep {
                        from,
                        compose: Compose::Forward { source, .. },
                        ..
                    }) = step
                    {
                        assert!(*source < n);
                        assert_eq!(s.steps[*source].to(), *from);
                    }
                }
            }
        }
    }

    #[test]
    fn second_run_uses_alternate_data() {
        let fx = Fixtures::default_fixtures();
        let a = script(&fx, Scenario::Import, Mode::Ledger, false);
        let b = script(&fx, Scenario::Import, Mode::Ledger, true);
        assert_ne!(a.cnt_no, b.cnt_no);
        assert_ne!(a.instance, b.instance);
        assert_eq!(a.steps, b.steps);
    }
}
