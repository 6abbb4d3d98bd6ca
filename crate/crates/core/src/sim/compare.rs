use std::collections::{BTreeMap, BTreeSet};

use crate::message::AttributeId;

use super::attack::{battery, AttackKind, DetectionReport};
use super::audit::exposure;
use super::run::run_scenario;
use super::transcript::RunVerdict;
use super::{Fixtures, Mode, Scenario, SimError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonRow {
    pub scenario: Scenario,
    pub kind: AttackKind,
    pub p2p: DetectionReport,
    pub ledger: DetectionReport,
}

fn cell(r: &DetectionReport) -> String {
    match (r.applicable, r.detected) {
        (false, _) => "n/a".into(),
        (true, false) => "MISSED".into(),
        (true, true) => format!("{} by {}", r.code.as_deref().unwrap_or("?"), r.detector.as_deref().unwrap_or("?")),
    }
}

/// Both enforcement modes side by side on the same fixtures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonReport {
    pub honest: Vec<(Scenario, Mode, RunVerdict)>,
    pub rows: Vec<ComparisonRow>,
    /// Attributes that reached any actor, per scenario and mode.
    pub exposure: BTreeMap<(Scenario, Mode), BTreeSet<AttributeId>>,
    pub verdict: RunVerdict,
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (scenario, mode, verdict) in &self.honest {
            let v = match verdict {
                RunVerdict::Pass => "PASS".to_owned(),
                RunVerdict::Fail(r) => format!("FAIL {r}"),
            };
            out.push_str(&format!("honest {scenario} {mode}: {v}\n"));
        }
        out.push('\n');
        let head = ["scenario", "attack", "p2p", "ledger"];
        let body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| [r.scenario.to_string(), r.kind.to_string(), cell(&r.p2p), cell(&r.ledger)])
            .collect();
        let mut widths = head.map(str::len);
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: [&str; 4]| {
            let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
            format!("{}\n", padded.join("  ").trim_end())
        };
        out.push_str(&line(head));
        for row in &body {
            out.push_str(&line([&row[0], &row[1], &row[2], &row[3]]));
        }
        out.push('\n');
        for ((scenario, mode), attrs) in &self.exposure {
            let attrs: Vec<&str> = attrs.iter().map(AttributeId::as_str).collect();
            out.push_str(&format!("exposed {scenario} {mode}: {}\n", attrs.join(", ")));
        }
        match &self.verdict {
            RunVerdict::Pass => out.push_str("VERDICT PASS\n"),
            RunVerdict::Fail(r) => out.push_str(&format!("VERDICT FAIL {r}\n")),
        }
        out
    }
}

pub fn compare_modes(fx: &Fixtures) -> Result<ComparisonReport, SimError> {
    let mut honest = Vec::new();
    let mut exposed = BTreeMap::new();
    let mut rows = Vec::new();
    for scenario in Scenario::ALL {
        for mode in Mode::ALL {
            let (_, t) = run_scenario(fx, scenario, mode)?;
            let attrs: BTreeSet<AttributeId> = exposure(&t).into_values().flatten().collect();
            exposed.insert((scenario, mode), attrs);
            honest.push((scenario, mode, t.verdict));
        }
        let strip = |mut r: DetectionReport| {
            r.transcript = None;
            r
        };
        let p2p = battery(fx, scenario, Mode::P2p)?;
        let ledger = battery(fx, scenario, Mode::Ledger)?;
        for (p, l) in p2p.into_iter().zip(ledger) {
            rows.push(ComparisonRow {
                scenario,
                kind: p.kind,
                p2p: strip(p),
                ledger: strip(l),
            });
        }
    }

    let mut problems = Vec::new();
    for (scenario, mode, v) in &honest {
        if !v.passed() {
            problems.push(format!("honest {scenario} {mode} failed"));
        }
    }
    for r in &rows {
        if !r.p2p.detected && !r.ledger.detected {
            problems.push(format!("{} {} missed in both modes", r.scenario, r.kind));
        }
        if r.kind == AttackKind::TamperField && !r.p2p.detected {
            problems.push(format!("{} TAMPER_FIELD missed peer-to-peer", r.scenario));
        }
        if r.kind == AttackKind::LedgerTamper && !r.ledger.detected {
            problems.push(format!("{} LEDGER_TAMPER missed on the ledger", r.scenario));
        }
    }
    for ((scenario, mode), attrs) in &exposed {
        if *mode == Mode::Ledger {
            for secret in [AttributeId::CNT_C, AttributeId::CSG_DATA] {
                if attrs.contains(&secret) {
                    problems.push(format!("ledger exposes {secret} in {scenario}"));
                }
            }
        }
    }
    let verdict = if problems.is_empty() {
        RunVerdict::Pass
    } else {
        RunVerdict::Fail(problems.join("; "))
    };
    Ok(ComparisonReport {
        honest,
        rows,
        exposure: exposed,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fixtures_compare_cleanly() {
        let report = compare_modes(&Fixtures::default_fixtures()).unwrap();
        assert_eq!(report.verdict, RunVerdict::Pass, "{}", report.to_text());
        assert_eq!(report.rows.len(), 10);
        let text = report.to_text();
        assert!(text.contains("LinkageMismatch"));
        assert!(text.ends_with("VERDICT PASS\n"));
    }
}
