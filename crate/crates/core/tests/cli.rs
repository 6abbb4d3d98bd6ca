use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_portsec"))
}

fn manifest(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn status(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn run_then_audit_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let trn = dir.path().join("import.trn");
    let chain = dir.path().join("export.chain");
    let fx = manifest("fixtures/default.fix");
    let (code, out) = status(&[
        "run", "--scenario", "import", "--mode", "p2p", "--fixtures", fx.to_str().unwrap(), "--out", trn.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("VERDICT PASS"));

    let (code, out) = status(&["audit", "--transcript", trn.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("no violations"));

    let (code, _) = status(&[
        "run", "--scenario", "export", "--mode", "ledger", "--chain-out", chain.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let (code, out) = status(&["ledger-verify", "--chain", chain.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("LOADED"));

    let mut bytes = std::fs::read(&chain).unwrap();
    let at = bytes.len() - 10;
    bytes[at] ^= 1;
    std::fs::write(&chain, bytes).unwrap();
    let (code, out) = status(&["ledger-verify", "--chain", chain.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(out.contains("CHAIN INVALID"));
}

#[test]
fn attacks_exit_zero_when_detected() {
    for (file, mode) in [
        ("attacks/tamper-weight.atk", "p2p"),
        ("attacks/replay-splice.atk", "p2p"),
        ("attacks/nonce-reuse.atk", "ledger"),
        ("attacks/unauthorized-author.atk", "p2p"),
        ("attacks/ledger-tamper.atk", "ledger"),
    ] {
        let spec = manifest(file);
        let (code, out) = status(&["attack", "--scenario", "export", "--mode", mode, "--spec", spec.to_str().unwrap()]);
        assert_eq!(code, 0, "{file}: {out}");
        assert!(out.contains("detected by"), "{out}");
    }
    let spec = manifest("attacks/ledger-tamper.atk");
    let (code, out) = status(&["attack", "--scenario", "export", "--mode", "p2p", "--spec", spec.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(out.contains("not applicable"));
}

#[test]
fn policy_check_exit_codes() {
    assert_eq!(status(&["policy-check", "--role", "CUSTOMS", "--attr", "CSG_DATA", "--action", "read"]).0, 0);
    assert_eq!(status(&["policy-check", "--role", "PCS", "--attr", "CSG_DATA", "--action", "read"]).0, 1);
    assert_eq!(status(&["policy-check", "--role", "PCS", "--attr", "NOPE", "--action", "read"]).0, 2);
    let policy = manifest("policy/default.policy");
    assert_eq!(
        status(&["policy-check", "--policy", policy.to_str().unwrap(), "--role", "SHIPPING_LINE", "--attr", "CNT_W", "--action", "write"]).0,
        0
    );
}

#[test]
fn fixtures_written_by_the_cli_are_the_shipped_ones() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fx.fix");
    assert_eq!(status(&["fixtures", "--out", out.to_str().unwrap()]).0, 0);
    assert_eq!(std::fs::read(out).unwrap(), std::fs::read(manifest("fixtures/default.fix")).unwrap());
}

#[test]
fn bad_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.fix");
    std::fs::write(&bad, "FIX+x'\n").unwrap();
    let (code, _) = status(&["run", "--scenario", "export", "--mode", "p2p", "--fixtures", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(status(&["run", "--scenario", "sideways", "--mode", "p2p"]).0, 2);
}
