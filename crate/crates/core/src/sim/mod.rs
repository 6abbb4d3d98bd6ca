//! Deterministic multi-actor simulation of the export and import
//! workflows, in peer-to-peer or ledger mode, with attack injection and
//! confidentiality audits.

mod attack;
mod audit;
mod compare;
mod fixtures;
mod run;
mod script;
mod transcript;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use attack::{
    battery, inject_attack, localize, mutate_field, tamper_sweep, AttackKind, AttackSpec, AttackTarget,
    DetectionReport, Localization,
};
pub use audit::{audit_views, exposure, AuditReport};
pub use compare::{compare_modes, ComparisonReport, ComparisonRow};
pub use fixtures::{Fixtures, World, DEFAULT_FIXTURES, LEAF_VALIDITY, ORG_VALIDITY, ROOT_NAME, ROOT_VALIDITY};
pub use run::{run_export, run_import, run_scenario, run_script, Intercept, NoIntercept};
pub use script::{script, Compose, LedgerStep, MessageStep, OutOfBand, ScenarioScript, Step};
pub use transcript::{Event, RunVerdict, Transcript};

use crate::segment::ParseError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("fixtures incomplete: missing {0}")]
    FixtureIncomplete(String),
    #[error("fixtures invalid: {0}")]
    FixtureInvalid(String),
    #[error("attack target does not resolve: {0}")]
    TargetUnresolved(String),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    Export,
    Import,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::Export, Scenario::Import];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Export => "export",
            Scenario::Import => "import",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    P2p,
    Ledger,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::P2p, Mode::Ledger];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::P2p => "p2p",
            Mode::Ledger => "ledger",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}
