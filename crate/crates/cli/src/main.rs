//! `fairledger`: run scenarios, audit stored transcripts, verify proofs
//! offline and regenerate golden vectors.
//!
//! Exit status is 0 on success, 1 on malformed input and 2 when a proof or
//! audit fails verification.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fairledger::audit::{verify_proof, Auditor, ContextFile, Observation, VerifyContext};
use fairledger::codec::{Decode, Encode, Reader, Writer};
use fairledger::proposal::SelectionPolicy;
use fairledger::report::ViolationReport;
use fairledger::simnet::{run, ByzantineBehavior, Scenario, Trace};
use fairledger::vectors;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "fairledger", version, about = "Accountable fair-ordering ledger simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute a scenario and write its trace, reports, proofs and transcript.
    Run {
        /// Scenario file (JSON).
        #[arg(long, value_name = "PATH", conflicts_with_all = ["canonical", "scenario_pos"])]
        scenario: Option<PathBuf>,
        #[arg(value_name = "SCENARIO", conflicts_with = "canonical")]
        scenario_pos: Option<PathBuf>,
        /// Built-in detection scenario for one behavior (e.g. drop_tx), or `honest`.
        #[arg(long, value_name = "BEHAVIOR")]
        canonical: Option<String>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the selection policy: fixed:N or bytes:N.
        #[arg(long, value_name = "POLICY")]
        policy: Option<SelectionPolicy>,
        /// Output directory; without it the trace goes to stdout.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::JsonLines)]
        format: Format,
    },
    /// Re-audit the transcript stored by `run --out DIR` and list the reports.
    Audit {
        #[arg(value_name = "DIR")]
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::JsonLines)]
        format: Format,
    },
    /// Check a proof file; exits 0 iff the proof verifies.
    VerifyProof {
        #[arg(value_name = "FILE")]
        file: PathBuf,
    },
    /// Print or write the golden codec and hash vectors.
    GenVectors {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    JsonLines,
    Pretty,
}

/// A proof together with everything needed to check it.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProofFile {
    context: ContextFile,
    /// Hex of the canonical report encoding.
    report: String,
}

enum Failure {
    Malformed(anyhow::Error),
    Rejected(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Malformed(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are malformed input; help and version are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run {
            scenario,
            scenario_pos,
            canonical,
            seed,
            policy,
            out,
            format,
        } => cmd_run(scenario.or(scenario_pos), canonical, seed, policy, out, format),
        Command::Audit { trace, format } => cmd_audit(&trace, format),
        Command::VerifyProof { file } => cmd_verify(&file),
        Command::GenVectors { out } => cmd_vectors(out).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Malformed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Rejected(msg)) => {
            eprintln!("rejected: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load_scenario(path: Option<PathBuf>, canonical: Option<String>) -> Result<Scenario> {
    if let Some(name) = canonical {
        if name == "honest" {
            return Ok(Scenario::default());
        }
        let b: ByzantineBehavior = serde_json::from_value(serde_json::Value::String(name.clone()))
            .map_err(|_| anyhow!("unknown behavior {name:?}"))?;
        return Ok(Scenario::canonical(b));
    }
    let path = path.ok_or_else(|| anyhow!("give a scenario path or --canonical"))?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_run(
    path: Option<PathBuf>,
    canonical: Option<String>,
    seed: Option<u64>,
    policy: Option<SelectionPolicy>,
    out: Option<PathBuf>,
    format: Format,
) -> Result<(), Failure> {
    let mut sc = load_scenario(path, canonical)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(p) = policy {
        sc.policy = p;
    }
    let trace = run(&sc).map_err(|e| anyhow!(e))?;
    match out {
        None => emit(&render_events(&trace, format)),
        Some(dir) => {
            write_outputs(&dir, &trace)?;
            emit(&render_summary(&trace, format));
        }
    }
    Ok(())
}

fn write_outputs(dir: &Path, trace: &Trace) -> Result<()> {
    let proofs_dir = dir.join("proofs");
    fs::create_dir_all(&proofs_dir).with_context(|| format!("creating {}", proofs_dir.display()))?;
    let ctx = ContextFile::from(&trace.scenario.context());
    let kind = trace.scenario.hash;
    write(dir.join("scenario.json"), pretty_json(&trace.scenario)?)?;
    write(dir.join("context.json"), pretty_json(&ctx)?)?;
    write(dir.join("trace.jsonl"), trace.to_json_lines())?;
    let mut reports = String::new();
    for r in &trace.reports {
        reports.push_str(&serde_json::to_string(&r.record(kind))?);
        reports.push('\n');
    }
    write(dir.join("reports.jsonl"), reports)?;
    for (i, r) in trace.proofs().enumerate() {
        let file = ProofFile {
            context: ContextFile::from(&trace.scenario.context()),
            report: hex::encode(r.encode()),
        };
        write(proofs_dir.join(format!("{i:04}.json")), pretty_json(&file)?)?;
    }
    let mut w = Writer::new();
    w.list(&trace.transcript);
    fs::write(dir.join("transcript.bin"), w.finish()).context("writing transcript")?;
    Ok(())
}

fn write(path: PathBuf, text: String) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn pretty_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn render_events(trace: &Trace, format: Format) -> String {
    match format {
        Format::JsonLines => trace.to_json_lines(),
        Format::Pretty => {
            let mut out = String::new();
            for e in &trace.events {
                let v = serde_json::to_value(e).expect("trace events serialize");
                out.push_str(&pretty_line(&v));
                out.push('\n');
            }
            out
        }
    }
}

/// `time event key=value ...`, remaining fields sorted by key.
fn pretty_line(v: &serde_json::Value) -> String {
    let obj = v.as_object().expect("events are objects");
    let time = obj.get("time").map(|t| t.to_string()).unwrap_or_default();
    let event = obj.get("event").and_then(|e| e.as_str()).unwrap_or("?");
    let mut line = format!("{time:>7} {event:<15}");
    for (k, val) in obj {
        if k == "time" || k == "event" {
            continue;
        }
        let shown = match val {
            serde_json::Value::String(s) if s.len() > 16 => s[..16].to_string(),
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        line.push_str(&format!(" {k}={shown}"));
    }
    line
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    seed: u64,
    height: usize,
    messages: u64,
    reports: usize,
    proofs: usize,
    digest: String,
}

fn render_summary(trace: &Trace, format: Format) -> String {
    let s = Summary {
        name: &trace.scenario.name,
        seed: trace.scenario.seed,
        height: trace.chain.len(),
        messages: trace.messages_sent,
        reports: trace.reports.len(),
        proofs: trace.proofs().count(),
        digest: trace.digest().to_hex(),
    };
    match format {
        Format::JsonLines => format!("{}\n", serde_json::to_string(&s).expect("summary serializes")),
        Format::Pretty => format!(
            "scenario {} (seed {})\n  height   {}\n  messages {}\n  reports  {} ({} proofs)\n  digest   {}\n",
            s.name, s.seed, s.height, s.messages, s.reports, s.proofs, s.digest
        ),
    }
}

fn read_context(path: &Path) -> Result<VerifyContext> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ContextFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    VerifyContext::try_from(&file).map_err(|e| anyhow!("bad context: {e}"))
}

fn cmd_audit(dir: &Path, format: Format) -> Result<(), Failure> {
    let ctx = read_context(&dir.join("context.json"))?;
    let path = dir.join("transcript.bin");
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = Reader::new(&bytes);
    let transcript: Vec<Observation> = r
        .list()
        .and_then(|t| r.finish().map(|()| t))
        .map_err(|e| anyhow!("decoding transcript: {e}"))?;
    let reports = Auditor::replay(Scenario::auditor_key().public(), ctx.genesis.clone(), &transcript)
        .map_err(|e| Failure::Rejected(format!("transcript chain does not replay: {e}")))?;
    let kind = ctx.hash();
    for rep in &reports {
        let rec = rep.record(kind);
        match format {
            Format::JsonLines => emit(&format!("{}\n", serde_json::to_string(&rec).map_err(anyhow::Error::from)?)),
            Format::Pretty => emit(&format!(
                "{:<5} {:<28} accused={} evidence={}\n",
                rec.kind,
                rec.rule,
                &rec.accused[..16],
                &rec.evidence[..16]
            )),
        }
    }
    let bad = reports.iter().filter(|r| r.is_proof() && !verify_proof(r, &ctx)).count();
    if bad > 0 {
        return Err(Failure::Rejected(format!("{bad} audit proofs do not verify")));
    }
    Ok(())
}

fn cmd_verify(path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: ProofFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let ctx = VerifyContext::try_from(&file.context).map_err(|e| anyhow!("bad context: {e}"))?;
    let bytes = hex::decode(file.report.trim()).context("report is not hex")?;
    let report = match ViolationReport::decode(&bytes) {
        Ok(r) => r,
        Err(e) => return Err(Failure::Rejected(format!("report does not decode: {e}"))),
    };
    if !report.is_proof() {
        return Err(Failure::Rejected("report is a claim, not a proof".into()));
    }
    if verify_proof(&report, &ctx) {
        emit(&format!("ok {} {}\n", report.rule.as_str(), report.accused.to_hex()));
        Ok(())
    } else {
        Err(Failure::Rejected(format!("{} proof does not verify", report.rule.as_str())))
    }
}

fn cmd_vectors(out: Option<PathBuf>) -> Result<()> {
    let text = vectors::to_json(&vectors::generate());
    match out {
        Some(path) => write(path, text),
        None => {
            emit(&text);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "fairledger", "run", "--scenario", "s.json", "--seed", "9", "--policy", "bytes:512", "--out", "o",
            "--format", "pretty",
        ])
        .unwrap();
        match cli.command {
            Command::Run { seed, policy, format, .. } => {
                assert_eq!(seed, Some(9));
                assert_eq!(policy, Some(SelectionPolicy::MaxBytes(512)));
                assert_eq!(format, Format::Pretty);
            }
            other => panic!("parsed as {other:?}"),
        }
        assert!(Cli::try_parse_from(["fairledger", "run", "--policy", "count:3"]).is_err());
    }

    #[test]
    fn unknown_behavior_is_malformed() {
        assert!(load_scenario(None, Some("nope".into())).is_err());
        assert!(load_scenario(None, Some("drop_tx".into())).is_ok());
    }
}
