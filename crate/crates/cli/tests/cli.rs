//! End-to-end behavior of the `fairledger` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairledger"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

#[test]
fn honest_run_writes_empty_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["run", "--canonical", "honest", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = dir.path().join("out");
    assert_eq!(fs::read_to_string(out.join("reports.jsonl")).unwrap(), "");
    assert!(fs::read_dir(out.join("proofs")).unwrap().next().is_none());
    assert!(!fs::read_to_string(out.join("trace.jsonl")).unwrap().is_empty());
    let audit = bin(&["audit", "out"], dir.path());
    assert_eq!(audit.status.code(), Some(0));
    assert!(audit.stdout.is_empty());
}

#[test]
fn equivocation_proof_verifies_and_tampering_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["run", "--canonical", "equivocate", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let proof = dir.path().join("out/proofs/0000.json");
    let ok = bin(&["verify-proof", proof.to_str().unwrap()], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("ok conflicting messages"));

    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&proof).unwrap()).unwrap();
    let mut report = hex::decode(v["report"].as_str().unwrap()).unwrap();
    let last = report.len() - 1;
    report[last] ^= 0x01;
    v["report"] = hex::encode(report).into();
    fs::write(dir.path().join("tampered.json"), v.to_string()).unwrap();
    assert_eq!(bin(&["verify-proof", "tampered.json"], dir.path()).status.code(), Some(2));

    // The auditor saw both copies on the wire as well.
    let audit = bin(&["audit", "out"], dir.path());
    assert_eq!(audit.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&audit.stdout).contains("conflicting messages"));
}

#[test]
fn malformed_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{").unwrap();
    fs::write(dir.path().join("extra.json"), r#"{"nodes": 4, "colour": "red"}"#).unwrap();
    fs::write(dir.path().join("zero.json"), r#"{"seed": 0}"#).unwrap();
    for args in [
        vec!["verify-proof", "bad.json"],
        vec!["verify-proof", "missing.json"],
        vec!["run", "--scenario", "extra.json"],
        vec!["run", "zero.json"],
        vec!["run", "--canonical", "no_such_behavior"],
        vec!["run", "--canonical", "honest", "--policy", "count:3"],
        vec!["audit", "nowhere"],
        vec!["frobnicate"],
    ] {
        assert_eq!(bin(&args, dir.path()).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn overrides_change_the_run_and_output_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = bin(&["run", "--canonical", "honest", "--seed", "5"], dir.path());
    let b = bin(&["run", "--canonical", "honest", "--seed", "5"], dir.path());
    let c = bin(&["run", "--canonical", "honest", "--seed", "6"], dir.path());
    let d = bin(&["run", "--canonical", "honest", "--seed", "5", "--policy", "fixed:2"], dir.path());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert_ne!(a.stdout, d.stdout);
    let pretty = bin(&["run", "--canonical", "honest", "--format", "pretty"], dir.path());
    assert!(String::from_utf8_lossy(&pretty.stdout).lines().all(|l| !l.starts_with('{')));
}

#[test]
fn scenario_file_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["run", "--canonical", "drop_tx", "--out", "a"], dir.path()).status.code(), Some(0));
    let again = bin(&["run", "--scenario", "a/scenario.json", "--out", "b"], dir.path());
    assert_eq!(again.status.code(), Some(0));
    for f in ["trace.jsonl", "reports.jsonl", "transcript.bin"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn gen_vectors_matches_committed_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["gen-vectors"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let committed = include_str!("../../core/testdata/vectors.json");
    assert_eq!(String::from_utf8(o.stdout).unwrap(), committed);
}
