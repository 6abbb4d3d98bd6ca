use std::collections::BTreeSet;

use crate::adapter::{ForwardSpec, Route, ValidationReport};
use crate::crypto::AttributeSignature;
use crate::flat::{from_flat, to_flat};
use crate::ledger::{LedgerAction, PendingTransaction, Transaction};
use crate::message::{ActorId, AttributeId, FieldValue, Message, SecuredMessage};
use crate::pki::Timestamp;
use crate::policy::Role;

use super::script::{script, Compose, LedgerStep, MessageStep, ScenarioScript, Step};
use super::transcript::{Event, Transcript};
use super::{Fixtures, Mode, Scenario, World};

/// Hooks through which an attacker sees and changes what is in flight.
pub trait Intercept {
    /// A secured message after the sender produced it.
    fn message(&mut self, _n: usize, _sm: &mut SecuredMessage, _world: &World) {}
    /// The flat bytes about to reach the receiver.
    fn wire(&mut self, _n: usize, _bytes: &mut Vec<u8>) {}
    /// A signed transaction before it is submitted.
    fn transaction(&mut self, _n: usize, _tx: &mut Transaction, _world: &World) {}
    /// An endorsed transaction before it is committed.
    fn pending(&mut self, _n: usize, _p: &mut PendingTransaction, _world: &World) {}
}

pub struct NoIntercept;

impl Intercept for NoIntercept {}

fn tick(world: &mut World) -> Timestamp {
    world.trust.now += 1;
    let now = world.trust.now;
    world.ledger.set_time(now);
    now
}

fn borrowed(fields: &[(AttributeId, String)]) -> Vec<(AttributeId, &str)> {
    fields.iter().map(|(a, v)| (a.clone(), v.as_str())).collect()
}

/// Runs the steps of `s` on `world`, which keeps its stores and ledger
/// afterwards so a second run can follow.
pub fn run_script(world: &mut World, s: &ScenarioScript, intercept: &mut dyn Intercept) -> Transcript {
    let mut t = Transcript::new(s.scenario, s.mode, &s.instance);
    for role in Role::ALL {
        t.push(Event::Actor {
            actor: world.cast(role).clone(),
            role,
        });
    }
    match s.mode {
        Mode::P2p => run_p2p(world, s, intercept, &mut t),
        Mode::Ledger => run_ledger(world, s, intercept, &mut t),
    }
    t
}

fn run_p2p(world: &mut World, s: &ScenarioScript, intercept: &mut dyn Intercept, t: &mut Transcript) {
    let mut prepared: Vec<AttributeSignature> = Vec::new();
    for oob in &s.prep {
        let signer = world.cast(oob.signer).clone();
        let to = world.cast(oob.to).clone();
        let at = tick(world);
        let fields = borrowed(&oob.fields);
        let signed = world
            .adapters
            .get_mut(&signer)
            .expect("cast actors have adapters")
            .sign_out_of_band(&s.instance, &fields, &to, at);
        let sig = match signed {
            Ok(sig) => sig,
            Err(e) => {
                t.push(Event::Error { n: 0, detail: e.to_string() });
                t.fail(format!("preparation by {signer}: {e}"));
                return;
            }
        };
        let received = world
            .adapters
            .get_mut(&to)
            .expect("cast actors have adapters")
            .receive_out_of_band(&s.instance, &sig, &fields, &signer, &world.trust);
        t.push(Event::Author {
            signer: signer.clone(),
            to: to.clone(),
            attrs: sig.attrs.clone(),
            signature: sig.sig.clone(),
        });
        if let Err(e) = received {
            t.push(Event::Error { n: 0, detail: e.to_string() });
            t.fail(format!("preparation received by {to}: {e}"));
            return;
        }
        prepared.push(sig);
    }

    let mut received: Vec<Option<(ValidationReport, SecuredMessage)>> = Vec::new();
    for (n, step) in s.steps.iter().enumerate() {
        let Step::Message(m) = step else {
            continue;
        };
        let from = world.cast(m.from).clone();
        let to = world.cast(m.to).clone();
        t.push(Event::Step {
            n,
            label: step.label().to_owned(),
            from: from.clone(),
            to: to.clone(),
        });
        tick(world);
        let (sm, held) = match compose(world, s, m, &to, &prepared, &received) {
            Ok(x) => x,
            Err(detail) => {
                t.push(Event::Error { n, detail: detail.clone() });
                t.fail(format!("step {n} {}: {detail}", step.label()));
                return;
            }
        };
        t.push(Event::Held {
            n,
            actor: from.clone(),
            attrs: held,
        });
        let mut sm = sm;
        intercept.message(n, &mut sm, world);
        let mut bytes = to_flat(&sm);
        intercept.wire(n, &mut bytes);
        t.push(Event::Sent { n, bytes: bytes.clone() });

        let sender_chain = world.adapter(&from).chain.clone();
        let receiver = world.adapters.get_mut(&to).expect("cast actors have adapters");
        let (report, arrived) = match from_flat(&bytes) {
            Ok(arrived) => (receiver.validate_inbound(&arrived, &sender_chain, &world.trust), Some(arrived)),
            Err(e) => (ValidationReport::unparsable(to.clone(), m.msg_type, &bytes, e.to_string()), None),
        };
        t.push(Event::Validated {
            n,
            actor: to.clone(),
            report: report.clone(),
        });
        if !report.accepted() {
            let code = report.first_rejection().map_or("rejected".to_owned(), |f| f.code.to_string());
            t.fail(format!("step {n} {} rejected by {to}: {code}", step.label()));
            return;
        }
        received.resize_with(n, || None);
        received.push(arrived.map(|a| (report, a)));
    }
}

/// Builds the message of one step and lists the attributes whose plaintext
/// the sender supplied.
fn compose(
    world: &mut World,
    s: &ScenarioScript,
    m: &MessageStep,
    to: &ActorId,
    prepared: &[AttributeSignature],
    received: &[Option<(ValidationReport, SecuredMessage)>],
) -> Result<(SecuredMessage, Vec<AttributeId>), String> {
    let from = world.cast(m.from).clone();
    let route = Route::new(to.clone(), m.to).downstream(m.downstream.iter().copied());
    let adapter = world.adapters.get_mut(&from).expect("cast actors have adapters");
    match &m.compose {
        Compose::Fresh { fields, carried, attest } => {
            let msg = Message::plain(m.msg_type, s.instance.clone(), borrowed(fields)).map_err(|e| e.to_string())?;
            let carried: Vec<AttributeSignature> = carried.iter().map(|i| prepared[*i].clone()).collect();
            let sm = adapter
                .secure_outbound_attesting(&msg, &carried, attest.as_deref(), &route, &world.trust)
                .map_err(|e| e.to_string())?;
            Ok((sm, fields.iter().map(|(a, _)| a.clone()).collect()))
        }
        Compose::Forward {
            source,
            select,
            added,
            attest,
        } => {
            let (report, original) = received
                .get(*source)
                .and_then(Option::as_ref)
                .ok_or_else(|| format!("nothing accepted at step {source}"))?;
            let spec = ForwardSpec {
                msg_type: m.msg_type,
                select: select.clone(),
                added: added.clone(),
                attest: attest.clone(),
            };
            let sm = adapter
                .forward(report, original, &spec, &route, &world.trust)
                .map_err(|e| e.to_string())?;
            let added: BTreeSet<&AttributeId> = added.iter().map(|(a, _)| a).collect();
            let held = sm
                .message
                .fields()
                .iter()
                .filter(|(attr, value)| match value {
                    FieldValue::Plain(_) => true,
                    FieldValue::Sealed(_) => added.contains(attr) || original.message.get(attr) != Some(value),
                    FieldValue::HashOnly(_) => added.contains(attr),
                })
                .map(|(a, _)| a.clone())
                .collect();
            Ok((sm, held))
        }
    }
}

fn run_ledger(world: &mut World, s: &ScenarioScript, intercept: &mut dyn Intercept, t: &mut Transcript) {
    for (n, step) in s.steps.iter().enumerate() {
        let Step::Ledger(l) = step else {
            continue;
        };
        let invoker = world.cast(l.invoker).clone();
        let endorser = world.cast(l.endorser).clone();
        t.push(Event::Step {
            n,
            label: step.label().to_owned(),
            from: invoker.clone(),
            to: endorser.clone(),
        });
        tick(world);
        let (signer, outcome) = ledger_step(world, s, l, n, &invoker, &endorser, intercept);
        let failed = outcome.as_ref().err().cloned();
        t.push(Event::Ledger {
            n,
            action: l.action,
            cnt_no: s.cnt_no.clone(),
            invoker: signer,
            endorser: endorser.clone(),
            outcome,
        });
        for role in [Role::ShippingLine, Role::Terminal, Role::Pcs] {
            let actor = world.cast(role).clone();
            let outcome = world
                .ledger
                .query(&world.leaves[&actor], &s.cnt_no)
                .map(|a| a.state)
                .map_err(|e| e.code().to_owned());
            t.push(Event::Query {
                n,
                actor,
                cnt_no: s.cnt_no.clone(),
                outcome,
            });
        }
        if let Some(code) = failed {
            t.fail(format!("step {n} {} denied: {code}", step.label()));
            break;
        }
    }
    let outcome = world.ledger.verify_chain().map_err(|f| (f.block, f.kind.code().to_owned()));
    if let Err((block, code)) = &outcome {
        t.fail(format!("chain verification failed at block {block:?}: {code}"));
    }
    t.push(Event::Verify { outcome });
}

fn ledger_step(
    world: &mut World,
    s: &ScenarioScript,
    l: &LedgerStep,
    n: usize,
    invoker: &ActorId,
    endorser: &ActorId,
    intercept: &mut dyn Intercept,
) -> (ActorId, Result<u64, String>) {
    let terminal = match l.action {
        LedgerAction::Create => Some(world.org_of(world.cast(Role::Terminal)).unwrap_or_default().to_owned()),
        _ => None,
    };
    let mut tx = Transaction::sign(
        l.action,
        &s.cnt_no,
        terminal.as_deref(),
        world.leaves[invoker].clone(),
        &world.keys[invoker],
    );
    intercept.transaction(n, &mut tx, world);
    let signer = tx.invoker.subject.clone();
    let outcome = (|| {
        let code = |e: crate::ledger::LedgerError| e.code().to_owned();
        let mut pending = world.ledger.submit(tx).map_err(code)?;
        let endorsement = pending.tx.endorsement(world.leaves[endorser].clone(), &world.keys[endorser]);
        world.ledger.endorse(&mut pending, endorsement).map_err(code)?;
        intercept.pending(n, &mut pending, world);
        let report = world.ledger.commit(vec![pending]).map_err(|e| e.root().code().to_owned())?;
        Ok(report.block)
    })();
    (signer, outcome)
}

/// Builds a fresh world from `fx` and runs one scenario in it.
pub fn run_scenario(fx: &Fixtures, scenario: Scenario, mode: Mode) -> Result<(World, Transcript), super::SimError> {
    let mut world = World::build(fx)?;
    let s = script(fx, scenario, mode, false);
    let t = run_script(&mut world, &s, &mut NoIntercept);
    Ok((world, t))
}

pub fn run_export(fx: &Fixtures, mode: Mode) -> Result<(World, Transcript), super::SimError> {
    run_scenario(fx, Scenario::Export, mode)
}

pub fn run_import(fx: &Fixtures, mode: Mode) -> Result<(World, Transcript), super::SimError> {
    run_scenario(fx, Scenario::Import, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::FindingCode;
    use crate::ledger::AssetState;

    fn honest(scenario: Scenario, mode: Mode, dg: bool) -> Transcript {
        let mut fx = Fixtures::default_fixtures();
        fx.dg = dg;
        run_scenario(&fx, scenario, mode).unwrap().1
    }

    #[test]
    fn honest_runs_pass() {
        for dg in [false, true] {
            for scenario in Scenario::ALL {
                for mode in Mode::ALL {
                    let t = honest(scenario, mode, dg);
                    assert!(t.verdict.passed(), "{scenario} {mode} dg={dg}: {:?}\n{}", t.verdict, t.to_text());
                    assert_eq!(t.reject_count(), 0);
                    for (_, _, r) in t.reports() {
                        assert!(r.findings.is_empty(), "{:?}", r.findings);
                    }
                }
            }
        }
    }

    #[test]
    fn ledger_lifecycle_reaches_final_state() {
        let t = honest(Scenario::Export, Mode::Ledger, false);
        let last = t
            .events
            .iter()
            .rev()
            .find_map(|e| match e {
                Event::Query { outcome: Ok(s), .. } => Some(*s),
                _ => None,
            })
            .unwrap();
        assert_eq!(last, AssetState::Loaded);
    }

    #[test]
    fn transcript_text_round_trip() {
        for mode in Mode::ALL {
            let t = honest(Scenario::Import, mode, true);
            let back = Transcript::from_text(&t.to_text()).unwrap();
            assert_eq!(back.to_text(), t.to_text());
            assert_eq!(back.events.len(), t.events.len());
            assert_eq!(back.verdict, t.verdict);
        }
    }

    #[test]
    fn normalized_transcript_is_deterministic() {
        for scenario in Scenario::ALL {
            let a = honest(scenario, Mode::P2p, false);
            let b = honest(scenario, Mode::P2p, false);
            if scenario == Scenario::Import {
                // sealed values use fresh keys and nonces
                assert_ne!(a.to_text(), b.to_text());
            }
            assert_eq!(a.determinism_digest(), b.determinism_digest());
        }
    }

    #[test]
    fn same_booking_twice_warns_of_nonce_reuse() {
        let fx = Fixtures::default_fixtures();
        let mut world = World::build(&fx).unwrap();
        let s = script(&fx, Scenario::Import, Mode::P2p, false);
        assert!(run_script(&mut world, &s, &mut NoIntercept).verdict.passed());
        let mut again = s.clone();
        again.instance = fx.instance(true).to_owned();
        let t = run_script(&mut world, &again, &mut NoIntercept);
        assert!(t.verdict.passed());
        assert!(t.reports().any(|(_, _, r)| r.has(FindingCode::NonceReuse)));
    }
}
