//! Supervisory audit: the disclosure bundle a subject (or an authority
//! acting for one) assembles, and the verifier that checks a chain against
//! it.
//!
//! A bundle holds, per contract, the commitment nonce, the plaintext data
//! instances, the plaintext policy, and the controller's books: `requests`
//! (every usage notification, in order) and `performed` (every activity the
//! controller actually executed off-chain). The verifier recomputes every
//! commitment, replays the on-chain decision log through the reference
//! interpreter, and demands a permitting on-chain record for every performed
//! activity. Mismatches are verdicts, not errors.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use accord_core::compiler::obfuscate_event;
use accord_core::contracts::{
    self, parse_usage_log, parse_violation_log, UsageLogBody, UsageRecord,
};
use accord_core::crypto::{Address, Hash32, Nonce32};
use accord_core::ledger::{selector, AbiValue, Chain, LogFilter};
use accord_core::policy::{
    parse_policy, ActionKind, DefaultDecision, Event, Interpreter,
};
use accord_core::provenance::{commit_data, DataInstance, DataModel, DataReference};

pub const BUNDLE_FORMAT: &str = "audit-bundle.v1";

/// One plaintext event from a controller's books.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JournalEvent {
    pub activity: String,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
    pub tick: u64,
}

impl JournalEvent {
    pub fn event(&self) -> Event {
        Event::new(
            self.activity.clone(),
            self.attrs
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect::<Vec<_>>(),
        )
    }
}

/// Everything disclosed for one usage contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Disclosure {
    pub label: String,
    pub contract: Address,
    pub nonce: Nonce32,
    pub default_decision: DefaultDecision,
    pub deploy_tick: u64,
    pub policy_text: String,
    pub data: Vec<DataInstance>,
    pub requests: Vec<JournalEvent>,
    pub performed: Vec<JournalEvent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditBundle {
    pub format: String,
    pub scenario: String,
    pub chain_head: Hash32,
    pub chain_height: u64,
    pub data_model: DataModel,
    pub disclosures: Vec<Disclosure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Verdict {
    Consistent,
    Mismatch { detail: String },
    PolicyViolation { detail: String },
}

impl Verdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Verdict::Consistent)
    }

    pub fn is_violation(&self) -> bool {
        matches!(self, Verdict::PolicyViolation { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Finding {
    pub label: String,
    pub check: String,
    pub verdict: Verdict,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.verdict {
            Verdict::Consistent => write!(f, "ok    {} {}", self.label, self.check),
            Verdict::Mismatch { detail } => {
                write!(f, "FAIL  {} {}: {detail}", self.label, self.check)
            }
            Verdict::PolicyViolation { detail } => {
                write!(f, "VIOLATION  {} {}: {detail}", self.label, self.check)
            }
        }
    }
}

pub fn all_consistent(findings: &[Finding]) -> bool {
    findings.iter().all(|f| f.verdict.is_consistent())
}

/// Check every disclosure in the bundle against the chain.
pub fn verify_bundle(chain: &Chain, bundle: &AuditBundle) -> Vec<Finding> {
    let mut findings = Vec::new();

    let head = chain.latest().hash;
    findings.push(Finding {
        label: "bundle".into(),
        check: "chain reference".into(),
        verdict: if bundle.format != BUNDLE_FORMAT {
            Verdict::Mismatch {
                detail: format!("unknown bundle format {:?}", bundle.format),
            }
        } else if head != bundle.chain_head {
            Verdict::Mismatch {
                detail: format!(
                    "bundle references chain head {}, chain has {head}",
                    bundle.chain_head
                ),
            }
        } else {
            Verdict::Consistent
        },
    });

    for disclosure in &bundle.disclosures {
        findings.push(check_commitments(chain, &bundle.data_model, disclosure));
        findings.push(check_decisions(chain, disclosure));
        findings.extend(check_performed(chain, disclosure));
    }
    findings
}

fn finding(disclosure: &Disclosure, check: &str, verdict: Verdict) -> Finding {
    Finding {
        label: disclosure.label.clone(),
        check: check.to_string(),
        verdict,
    }
}

/// Recompute each disclosed instance's digests and compare them, in order,
/// with the references the contract actually carries (storage slots, or
/// DataRef logs in event mode).
fn check_commitments(chain: &Chain, model: &DataModel, disclosure: &Disclosure) -> Finding {
    let mismatch = |detail: String| {
        finding(disclosure, "commitments", Verdict::Mismatch { detail })
    };

    let mut recomputed = Vec::new();
    for instance in &disclosure.data {
        match commit_data(model, instance, &disclosure.nonce) {
            Ok(reference) => recomputed.push(reference),
            Err(err) => return mismatch(format!("disclosed instance rejected: {err}")),
        }
    }

    let on_chain = match chain_references(chain, disclosure.contract) {
        Ok(refs) => refs,
        Err(detail) => return mismatch(detail),
    };

    if on_chain.len() != recomputed.len() {
        return mismatch(format!(
            "contract carries {} references, disclosure has {}",
            on_chain.len(),
            recomputed.len()
        ));
    }
    for (index, (found, expected)) in on_chain.iter().zip(&recomputed).enumerate() {
        if found != expected {
            return mismatch(format!(
                "reference {index} ({}) does not recompute from the disclosed plaintext",
                disclosure.data[index].path
            ));
        }
    }
    finding(disclosure, "commitments", Verdict::Consistent)
}

fn chain_references(chain: &Chain, contract: Address) -> Result<Vec<DataReference>, String> {
    let logged: Vec<DataReference> = chain
        .logs(&LogFilter {
            address: Some(contract),
            topic0: Some(contracts::data_ref_topic()),
            ..LogFilter::default()
        })
        .iter()
        .filter_map(|r| {
            let data = &r.log.data;
            if data.len() != 64 {
                return None;
            }
            let mut instantiation = [0u8; 32];
            let mut value = [0u8; 32];
            instantiation.copy_from_slice(&data[..32]);
            value.copy_from_slice(&data[32..]);
            Some(DataReference {
                instantiation: Hash32(instantiation),
                value: Hash32(value),
            })
        })
        .collect();
    if !logged.is_empty() {
        return Ok(logged);
    }

    let caller = contract;
    let count = chain
        .query(contract, caller, selector("refCount"), &[])
        .map_err(|err| format!("refCount query failed: {err}"))?[0]
        .as_u64()
        .ok_or("refCount returned no number")?;
    let mut refs = Vec::new();
    for index in 0..count {
        let out = chain
            .query(contract, caller, selector("dataRef"), &[AbiValue::U64(index)])
            .map_err(|err| format!("dataRef({index}) query failed: {err}"))?;
        match (out[0].as_b32(), out[1].as_b32()) {
            (Some(instantiation), Some(value)) => refs.push(DataReference {
                instantiation,
                value,
            }),
            _ => return Err(format!("dataRef({index}) returned malformed values")),
        }
    }
    Ok(refs)
}

/// The contract's decision log in block order, usage records and violations
/// interleaved.
enum LogItem {
    Usage(UsageRecord),
    Violation { tick: u64, kind: ActionKind },
}

fn decision_stream(chain: &Chain, contract: Address) -> Result<Vec<LogItem>, String> {
    let mut tagged: Vec<((u64, usize, usize), LogItem)> = Vec::new();
    for record in chain.logs(&LogFilter {
        address: Some(contract),
        topic0: Some(contracts::usage_event_topic()),
        ..LogFilter::default()
    }) {
        match parse_usage_log(record.log) {
            Some(UsageLogBody::Single(usage)) => tagged.push((
                (record.block, record.tx_index, record.log_index),
                LogItem::Usage(usage),
            )),
            Some(UsageLogBody::Bulk(_)) => {
                return Err("bulk record on a per-subject contract".into())
            }
            None => return Err("malformed usage record".into()),
        }
    }
    for record in chain.logs(&LogFilter {
        address: Some(contract),
        topic0: Some(contracts::violation_event_topic()),
        ..LogFilter::default()
    }) {
        match parse_violation_log(record.log) {
            Some((tick, kind)) => tagged.push((
                (record.block, record.tx_index, record.log_index),
                LogItem::Violation { tick, kind },
            )),
            None => return Err("malformed violation record".into()),
        }
    }
    tagged.sort_by_key(|(position, _)| *position);
    Ok(tagged.into_iter().map(|(_, item)| item).collect())
}

fn oracle_for(disclosure: &Disclosure) -> Result<Interpreter, String> {
    let mechanisms = parse_policy(&disclosure.policy_text)
        .map_err(|err| format!("disclosed policy does not parse: {err}"))?
        .mechanisms();
    let mut oracle = Interpreter::new(mechanisms, disclosure.default_decision, disclosure.deploy_tick)
        .map_err(|err| format!("disclosed policy is not valid: {err}"))?;
    oracle
        .record_actual(&init_marker(), disclosure.deploy_tick)
        .map_err(|err| format!("oracle setup: {err}"))?;
    Ok(oracle)
}

fn init_marker() -> Event {
    Event::new("__init", [] as [(&str, &str); 0])
}

fn permits(kind: ActionKind) -> bool {
    matches!(kind, ActionKind::Allow | ActionKind::Modify)
}

fn time_step_marker() -> Event {
    Event::new("timeStep", [] as [(&str, &str); 0])
}

fn digest_pairs(event: &Event, nonce: &Nonce32) -> (Hash32, Vec<(Hash32, Hash32)>) {
    let obf = obfuscate_event(event, nonce);
    let mut attrs = obf.attrs;
    attrs.sort();
    (obf.activity, attrs)
}

/// Replay the contract's full decision log through the reference
/// interpreter, pairing each on-chain usage record with the corresponding
/// disclosed request.
fn check_decisions(chain: &Chain, disclosure: &Disclosure) -> Finding {
    let mismatch = |detail: String| {
        finding(disclosure, "decision replay", Verdict::Mismatch { detail })
    };

    let stream = match decision_stream(chain, disclosure.contract) {
        Ok(stream) => stream,
        Err(detail) => return mismatch(detail),
    };
    let mut oracle = match oracle_for(disclosure) {
        Ok(oracle) => oracle,
        Err(detail) => return mismatch(detail),
    };

    let mut requests = disclosure.requests.iter();
    let mut matched = 0usize;
    for item in stream {
        match item {
            LogItem::Usage(record) => {
                let Some(request) = requests.next() else {
                    return mismatch(format!(
                        "chain has more usage records than disclosed requests ({matched})"
                    ));
                };
                let position = matched;
                matched += 1;
                if request.tick != record.tick {
                    return mismatch(format!(
                        "request {position}: disclosed tick {}, on-chain tick {}",
                        request.tick, record.tick
                    ));
                }
                let event = request.event();
                let (activity, attrs) = digest_pairs(&event, &disclosure.nonce);
                let mut recorded_attrs = record.attrs.clone();
                recorded_attrs.sort();
                if activity != record.activity || attrs != recorded_attrs {
                    return mismatch(format!(
                        "request {position} does not obfuscate to the on-chain record"
                    ));
                }
                let decision = match oracle.notify(&event, record.tick) {
                    Ok(decision) => decision,
                    Err(err) => return mismatch(format!("request {position}: {err}")),
                };
                if decision.kind != record.decision
                    || decision.delay_ticks != record.delay_ticks
                {
                    return mismatch(format!(
                        "request {position}: policy decides {:?}, chain recorded {:?}",
                        decision.kind, record.decision
                    ));
                }
                let mut oracle_subs: Vec<(Hash32, Hash32)> = decision
                    .substitutions
                    .iter()
                    .map(|(name, value)| {
                        (
                            accord_core::compiler::attr_name_digest(name, &disclosure.nonce),
                            accord_core::compiler::attr_value_digest(
                                name,
                                value,
                                &disclosure.nonce,
                            ),
                        )
                    })
                    .collect();
                oracle_subs.sort();
                let mut recorded_subs = record.substitutions.clone();
                recorded_subs.sort();
                if oracle_subs != recorded_subs {
                    return mismatch(format!(
                        "request {position}: substitutions differ from the policy's"
                    ));
                }
            }
            LogItem::Violation { tick, kind } => {
                let verdict = oracle
                    .first_match(&time_step_marker(), tick)
                    .map_err(|err| format!("violation at tick {tick}: {err}"));
                match verdict {
                    Err(detail) => return mismatch(detail),
                    Ok(None) => {
                        return mismatch(format!(
                            "violation at tick {tick} not reproduced by the policy"
                        ))
                    }
                    Ok(Some(decision)) => {
                        if decision.permits() || decision.kind != kind {
                            return mismatch(format!(
                                "violation at tick {tick}: policy yields {:?}, chain recorded {kind:?}",
                                decision.kind
                            ));
                        }
                    }
                }
                if let Err(err) = oracle.advance(tick) {
                    return mismatch(format!("violation at tick {tick}: {err}"));
                }
            }
        }
    }
    if requests.next().is_some() {
        return mismatch(format!(
            "disclosure lists more requests than the chain records ({matched} on chain)"
        ));
    }
    finding(disclosure, "decision replay", Verdict::Consistent)
}

/// Every performed activity needs a permitting on-chain record: same tick,
/// same digests after applying the recorded substitutions.
fn check_performed(chain: &Chain, disclosure: &Disclosure) -> Vec<Finding> {
    let stream = match decision_stream(chain, disclosure.contract) {
        Ok(stream) => stream,
        Err(detail) => {
            return vec![finding(
                disclosure,
                "performed activities",
                Verdict::Mismatch { detail },
            )]
        }
    };
    let records: Vec<UsageRecord> = stream
        .into_iter()
        .filter_map(|item| match item {
            LogItem::Usage(record) => Some(record),
            LogItem::Violation { .. } => None,
        })
        .collect();

    let mut findings = Vec::new();
    for entry in &disclosure.performed {
        let (activity, attrs) = digest_pairs(&entry.event(), &disclosure.nonce);
        let covered = records.iter().any(|record| {
            record.tick == entry.tick
                && permits(record.decision)
                && record.activity == activity
                && effective_attrs(record) == attrs
        });
        if !covered {
            findings.push(finding(
                disclosure,
                "performed activities",
                Verdict::PolicyViolation {
                    detail: format!(
                        "{} at tick {} was performed without a permitting on-chain record",
                        entry.activity, entry.tick
                    ),
                },
            ));
        }
    }
    if findings.is_empty() {
        findings.push(finding(
            disclosure,
            "performed activities",
            Verdict::Consistent,
        ));
    }
    findings
}

/// The attribute digests of the event as performed: the notified attributes
/// with the recorded substitutions applied.
fn effective_attrs(record: &UsageRecord) -> Vec<(Hash32, Hash32)> {
    let mut attrs = record.attrs.clone();
    for (name, value) in &record.substitutions {
        match attrs.iter_mut().find(|(n, _)| n == name) {
            Some(pair) => pair.1 = *value,
            None => attrs.push((*name, *value)),
        }
    }
    attrs.sort();
    attrs
}
