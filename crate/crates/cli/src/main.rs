use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use accord_core::compiler::compile_policy;
use accord_core::contracts::{self, subject_layout};
use accord_core::crypto::Nonce32;
use accord_core::ledger::Chain;
use accord_core::policy::{parse_policy, DefaultDecision, PolicyItem};
use accord_cli::audit::{all_consistent, verify_bundle, AuditBundle};
use accord_cli::runner::run_scenario;
use accord_cli::scenario::load_scenario;

#[derive(Parser)]
#[command(name = "accord", version, about = "Consent-contract ledger toolchain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario against a fresh chain.
    Run(RunArgs),
    /// Supervisory audit checks.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Policy toolchain.
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Chain file utilities.
    #[command(subcommand)]
    Chain(ChainCommand),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Seed for nonces and sealed-box ephemeral keys.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the gas report as JSON.
    #[arg(long, value_name = "FILE")]
    gas_report: Option<PathBuf>,
    /// Export the sealed chain as JSON lines.
    #[arg(long, value_name = "FILE")]
    export_chain: Option<PathBuf>,
    /// Export the audit bundle the subject would disclose.
    #[arg(long, value_name = "FILE")]
    export_audit: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Check a disclosure bundle against an exported chain.
    Verify {
        #[arg(long, value_name = "FILE")]
        chain: PathBuf,
        #[arg(long, value_name = "FILE")]
        bundle: PathBuf,
    },
}

#[derive(Subcommand)]
enum PolicyCommand {
    /// Parse a policy file and print its obfuscated compiled form.
    Compile {
        /// Policy file in the documented grammar.
        file: PathBuf,
        /// Pattern nonce as 64 hex digits; all zeros when omitted.
        #[arg(long)]
        nonce: Option<String>,
    },
}

#[derive(Subcommand)]
enum ChainCommand {
    /// Verify an exported chain and summarize it.
    Inspect {
        file: PathBuf,
        /// Print logs under one topic: a known name (usage, transfer,
        /// violation, childLinked, joined, left, dataRef) or 64 hex digits.
        #[arg(long, value_name = "TOPIC")]
        logs: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Audit(AuditCommand::Verify { chain, bundle }) => cmd_audit_verify(&chain, &bundle),
        Command::Policy(PolicyCommand::Compile { file, nonce }) => {
            cmd_policy_compile(&file, nonce.as_deref())
        }
        Command::Chain(ChainCommand::Inspect { file, logs }) => {
            cmd_chain_inspect(&file, logs.as_deref())
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let scenario = load_scenario(&args.scenario)?;
    let output = run_scenario(&scenario, args.seed)?;

    for line in &output.log {
        println!("{line}");
    }
    println!();
    print!("{}", output.report.render());

    if let Some(path) = &args.gas_report {
        let file = File::create(path).with_context(|| format!("cannot write {path:?}"))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &output.report)?;
        println!("gas report written to {}", path.display());
    }
    if let Some(path) = &args.export_chain {
        let file = File::create(path).with_context(|| format!("cannot write {path:?}"))?;
        output.chain.export_jsonl(BufWriter::new(file))?;
        println!("chain exported to {}", path.display());
    }
    if let Some(path) = &args.export_audit {
        let file = File::create(path).with_context(|| format!("cannot write {path:?}"))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &output.bundle)?;
        println!("audit bundle written to {}", path.display());
    }

    if output.failures.is_empty() {
        println!(
            "ok: {} blocks, {} decisions, all checks passed",
            output.chain.height(),
            output.decisions.len()
        );
        Ok(true)
    } else {
        for failure in &output.failures {
            eprintln!("check failed: {failure}");
        }
        Ok(false)
    }
}

fn cmd_audit_verify(chain_path: &Path, bundle_path: &Path) -> Result<bool> {
    let chain = import_chain(chain_path)?;
    let file = File::open(bundle_path).with_context(|| format!("cannot read {bundle_path:?}"))?;
    let bundle: AuditBundle = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("{bundle_path:?} is not a valid audit bundle"))?;

    let findings = verify_bundle(&chain, &bundle);
    for finding in &findings {
        println!("{finding}");
    }
    let ok = all_consistent(&findings);
    println!("{}", if ok { "verdict: consistent" } else { "verdict: mismatch" });
    Ok(ok)
}

fn cmd_policy_compile(path: &Path, nonce_hex: Option<&str>) -> Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {path:?}"))?;
    let policy = parse_policy(&text)?;
    let nonce = match nonce_hex {
        Some(hex_str) => {
            let bytes = hex::decode(hex_str).context("--nonce is not valid hex")?;
            Nonce32(
                bytes
                    .try_into()
                    .map_err(|_| anyhow::anyhow!("--nonce must be exactly 32 bytes"))?,
            )
        }
        None => Nonce32([0u8; 32]),
    };

    let mechanisms = policy.mechanisms();
    let mut layout = subject_layout();
    let compiled = compile_policy(&mechanisms, &nonce, DefaultDecision::Deny, &mut layout)?;

    let mut templates = Vec::new();
    for item in &policy.items {
        if let PolicyItem::Template(template) = item {
            templates.push(serde_json::json!({
                "name": template.name,
                "variables": template.variables.iter().map(|v| &v.name).collect::<Vec<_>>(),
            }));
        }
    }
    let summary = serde_json::json!({
        "mechanisms": mechanisms.len(),
        "templates": templates,
        "slotsUsed": layout.slots_used(),
        "compiled": compiled,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(true)
}

fn cmd_chain_inspect(path: &Path, topic: Option<&str>) -> Result<bool> {
    let chain = import_chain(path)?;
    println!(
        "height {}, head {}, {} transactions",
        chain.height(),
        chain.latest().hash,
        chain.blocks().iter().map(|b| b.txs.len()).sum::<usize>()
    );

    let Some(topic) = topic else { return Ok(true) };
    let topic0 = match topic {
        "usage" => contracts::usage_event_topic(),
        "transfer" => contracts::transfer_event_topic(),
        "violation" => contracts::violation_event_topic(),
        "childLinked" => contracts::child_linked_topic(),
        "joined" => contracts::joined_topic(),
        "left" => contracts::left_topic(),
        "dataRef" => contracts::data_ref_topic(),
        hex_str => {
            let bytes = hex::decode(hex_str).context("topic is neither a known name nor hex")?;
            accord_core::crypto::Hash32(
                bytes
                    .try_into()
                    .map_err(|_| anyhow::anyhow!("topic hex must be exactly 32 bytes"))?,
            )
        }
    };
    let filter = accord_core::ledger::LogFilter {
        topic0: Some(topic0),
        ..Default::default()
    };
    for record in chain.logs(&filter) {
        print!(
            "block {} tx {} log {} from {}: ",
            record.block, record.tx_index, record.log_index, record.log.address
        );
        if let Some(body) = contracts::parse_usage_log(record.log) {
            println!("{body:?}");
        } else if let Some((tick, sealed)) = contracts::parse_transfer_log(record.log) {
            println!("transfer at tick {tick}, sealed payload {} bytes", sealed.len());
        } else if let Some((tick, kind)) = contracts::parse_violation_log(record.log) {
            println!("violation at tick {tick}: {kind:?}");
        } else {
            println!(
                "topics {:?}, data {} bytes",
                record.log.topics,
                record.log.data.len()
            );
        }
    }
    Ok(true)
}

fn import_chain(path: &Path) -> Result<Chain> {
    let file = File::open(path).with_context(|| format!("cannot read {path:?}"))?;
    Chain::import_jsonl(BufReader::new(file))
        .with_context(|| format!("{path:?} failed chain verification"))
}
