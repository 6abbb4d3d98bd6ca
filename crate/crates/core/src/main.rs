use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use portsec::ledger::{export_chain, verify_chain_bytes};
use portsec::message::AttributeId;
use portsec::policy::{load_policy, AccessMatrix, Action, Role};
use portsec::sim::{
    audit_views, compare_modes, inject_attack, run_script, script, AttackSpec, Fixtures, Mode, NoIntercept, Scenario,
    Transcript, World,
};

/// Secured port workflows: peer-to-peer attribute signatures or a container
/// ledger, with attack injection and confidentiality audits.
///
/// Exit status: 0 when the outcome is the expected one (honest run
/// accepted, attack detected, chain valid, access permitted), 1 when it is
/// not, 2 on usage or input errors.
#[derive(Parser)]
#[command(name = "portsec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an honest scenario and print its transcript summary.
    Run {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        mode: Mode,
        /// Fixture file; the built-in fixtures when omitted.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Force dangerous-goods routing on.
        #[arg(long)]
        dg: bool,
        /// Write the transcript here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the exported ledger chain here (ledger mode).
        #[arg(long)]
        chain_out: Option<PathBuf>,
    },
    /// Run a scenario with an attack applied and report its detection.
    Attack {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long, default_value = "p2p")]
        mode: Mode,
        /// Attack file (ATTACK, TARGET and PAYLOAD records).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        dg: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every actor's plaintext view in a transcript against the policy.
    Audit {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run honest scenarios and the attack battery in both modes.
    Compare {
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        dg: bool,
    },
    /// Verify an exported chain and print the replayed world state.
    LedgerVerify {
        #[arg(long)]
        chain: PathBuf,
        /// Fixtures defining the member organizations and PKI.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Ask the policy whether a role may read or write an attribute.
    PolicyCheck {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        role: String,
        #[arg(long)]
        attr: String,
        #[arg(long)]
        action: String,
    },
    /// Write the built-in fixtures, with their certificates, to a file.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

type CliResult = Result<bool, String>;

fn read(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_fixtures(path: Option<&Path>, dg: bool) -> Result<Fixtures, String> {
    let mut fx = match path {
        Some(p) => Fixtures::parse(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
        None => Fixtures::default_fixtures(),
    };
    fx.dg |= dg;
    Ok(fx)
}

fn load_matrix(path: Option<&Path>) -> Result<AccessMatrix, String> {
    match path {
        Some(p) => load_policy(&read(p)?).map_err(|e| format!("{}: {e}", p.display())),
        None => Ok(AccessMatrix::default_policy()),
    }
}

fn print_summary(t: &Transcript) {
    for (label, from, to) in t.steps() {
        println!("{label:<20} {from} -> {to}");
    }
    for (n, actor, report) in t.reports() {
        if !report.findings.is_empty() {
            for f in &report.findings {
                println!("step {n} {actor}: {:?} {} {} {}", f.severity, f.code, f.subject, f.detail);
            }
        }
    }
    match &t.verdict {
        portsec::sim::RunVerdict::Pass => println!("VERDICT PASS"),
        portsec::sim::RunVerdict::Fail(r) => println!("VERDICT FAIL {r}"),
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Run {
            scenario,
            mode,
            fixtures,
            dg,
            out,
            chain_out,
        } => {
            let fx = load_fixtures(fixtures.as_deref(), dg)?;
            let mut world = World::build(&fx).map_err(|e| e.to_string())?;
            let t = run_script(&mut world, &script(&fx, scenario, mode, false), &mut NoIntercept);
            print_summary(&t);
            if let Some(p) = out {
                write(&p, &t.to_text())?;
            }
            if let Some(p) = chain_out {
                write(&p, &export_chain(world.ledger.orderer_certificate(), world.ledger.chain()))?;
            }
            Ok(t.verdict.passed())
        }
        Command::Attack {
            scenario,
            mode,
            spec,
            fixtures,
            dg,
            out,
        } => {
            let fx = load_fixtures(fixtures.as_deref(), dg)?;
            let spec = AttackSpec::parse(&read(&spec)?).map_err(|e| format!("{}: {e}", spec.display()))?;
            let report = inject_attack(&fx, scenario, mode, &spec).map_err(|e| e.to_string())?;
            println!("{}", report.summary());
            if let (Some(p), Some(t)) = (out, &report.transcript) {
                write(&p, &t.to_text())?;
            }
            Ok(report.detected)
        }
        Command::Audit { transcript, policy } => {
            let matrix = load_matrix(policy.as_deref())?;
            let text = String::from_utf8(read(&transcript)?).map_err(|e| e.to_string())?;
            let t = Transcript::from_text(&text).map_err(|e| format!("{}: {e}", transcript.display()))?;
            let audit = audit_views(&t, &matrix);
            print!("{}", audit.to_text());
            Ok(audit.clean())
        }
        Command::Compare { fixtures, dg } => {
            let fx = load_fixtures(fixtures.as_deref(), dg)?;
            let report = compare_modes(&fx).map_err(|e| e.to_string())?;
            print!("{}", report.to_text());
            Ok(report.verdict.passed())
        }
        Command::LedgerVerify { chain, fixtures } => {
            let fx = load_fixtures(fixtures.as_deref(), false)?;
            let world = World::build(&fx).map_err(|e| e.to_string())?;
            match verify_chain_bytes(&world.ledger.config, &read(&chain)?) {
                Ok(state) => {
                    for asset in state.values() {
                        println!("{} {} {} {}", asset.cnt_no, asset.state.as_str(), asset.shipping_line, asset.terminal);
                    }
                    println!("CHAIN VALID");
                    Ok(true)
                }
                Err(fault) => {
                    println!("CHAIN INVALID {fault}");
                    Ok(false)
                }
            }
        }
        Command::PolicyCheck {
            policy,
            role,
            attr,
            action,
        } => {
            let matrix = load_matrix(policy.as_deref())?;
            let role: Role = role.parse().map_err(|e: portsec::policy::PolicyError| e.to_string())?;
            let attr = AttributeId::new(&attr).map_err(|e| e.to_string())?;
            let action: Action = action.parse()?;
            let permitted = matrix.check(role, &attr, action).map_err(|e| e.to_string())?;
            println!("{}", if permitted { "PERMIT" } else { "DENY" });
            Ok(permitted)
        }
        Command::Fixtures { out } => {
            let fx = Fixtures::default_fixtures().with_certificates().map_err(|e| e.to_string())?;
            write(&out, &fx.to_text())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
