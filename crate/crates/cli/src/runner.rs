//! Multi-actor scenario execution over a fresh chain.
//!
//! The runner owns everything the paper keeps off-chain: actor key
//! material, plaintext data and policies, the sealed-payload channel, and
//! per-contract mirrors of the policy state. Every decision a deployed
//! contract makes is recomputed on the reference interpreter; a
//! disagreement aborts the run with a reproduction trace, because it means
//! the compiled machine and the semantics have drifted apart.
//!
//! Subjects use one derived address per counterparty, never their root
//! identity, so two controllers cannot link a shared customer through the
//! chain. The run closes with integrity checks: chain verification,
//! inclusion deadlines for withdrawal transactions, membership storage
//! frugality, and cross-contract digest disjointness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use accord_core::compiler::{
    attr_name_digest, attr_value_digest, compile_policy, decision_kind_byte, obfuscate_event,
    ObfEvent,
};
use accord_core::contracts::{
    self, decode_pairs, encode_pairs, subject_layout, Blueprint, BlueprintLogic,
    ControllerInit, JoinMode, StorageMode, SubjectInit,
};
use accord_core::crypto::{Address, Hash32, KeyPair, Nonce32};
use accord_core::ledger::{
    selector, AbiValue, Chain, ChainConfig, Receipt, Transaction, TxPayload, TxStatus,
};
use accord_core::policy::{
    parse_policy, ActionKind, Decision, DefaultDecision, Event, Interpreter,
};
use accord_core::provenance::{
    commit_data, GrantRecord, ProvenanceGraph, RecipientRole,
};

use crate::audit::{AuditBundle, Disclosure, JournalEvent, BUNDLE_FORMAT};
use crate::report::{GasLedger, GasReport};
use crate::scenario::{ContractKind, Party, Role, Scenario, StepSpec};

const ENDOWMENT: u64 = 1 << 60;
const CALL_GAS: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct DecisionRow {
    pub step: usize,
    pub contract: String,
    pub tick: u64,
    pub activity: String,
    pub kind: ActionKind,
    pub delay_ticks: u64,
}

pub struct RunOutput {
    pub chain: Chain,
    pub report: GasReport,
    pub decisions: Vec<DecisionRow>,
    pub graphs: BTreeMap<String, ProvenanceGraph>,
    pub bundle: AuditBundle,
    /// In-run check failures; a clean run has none.
    pub failures: Vec<String>,
    pub log: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("contract and reference interpreter disagree\n{0}")]
    Divergence(String),
    #[error("{0}")]
    Fatal(String),
}

struct Identity {
    keys: KeyPair,
    next_nonce: u64,
}

impl Identity {
    fn new(seed: &str) -> Self {
        Identity {
            keys: KeyPair::from_seed(seed.as_bytes()).expect("seeds are validated non-empty"),
            next_nonce: 0,
        }
    }

    fn address(&self) -> Address {
        self.keys.address()
    }
}

struct ContractRt {
    label: String,
    kind: ContractKind,
    address: Address,
    /// Subject actor name for subject contracts.
    subject: Option<String>,
    /// Actor playing the controlling party; a processor for forwarded
    /// contracts.
    counterparty: String,
    nonce: Nonce32,
    policy_text: String,
    default: DefaultDecision,
    deploy_tick: u64,
    oracle: Option<Interpreter>,
    grants: Vec<GrantRecord>,
    requests: Vec<JournalEvent>,
    performed: Vec<JournalEvent>,
    members_ever: BTreeSet<Address>,
    active: bool,
}

struct Runner<'a> {
    sc: &'a Scenario,
    rng: ChaCha20Rng,
    chain: Chain,
    roots: BTreeMap<String, Identity>,
    pairs: BTreeMap<(String, String), Identity>,
    contracts: BTreeMap<String, ContractRt>,
    ledger: GasLedger,
    decisions: Vec<DecisionRow>,
    graphs: BTreeMap<String, ProvenanceGraph>,
    deadlines: Vec<(Hash32, String, u64)>,
    failures: Vec<String>,
    log: Vec<String>,
    trace: Vec<String>,
}

pub fn run_scenario(sc: &Scenario, seed: u64) -> Result<RunOutput, RunError> {
    Runner::new(sc, seed)?.run()
}

impl<'a> Runner<'a> {
    fn new(sc: &'a Scenario, seed: u64) -> Result<Self, RunError> {
        let mut roots = BTreeMap::new();
        let mut pairs = BTreeMap::new();
        let mut config = ChainConfig {
            block_gas_limit: sc.chain.block_gas_limit,
            block_interval_secs: sc.chain.block_interval_secs,
            ..ChainConfig::default()
        };
        for actor in &sc.actors {
            let identity = Identity::new(&actor.key_seed);
            config.genesis_accounts.insert(identity.address(), ENDOWMENT);
            roots.insert(actor.name.clone(), identity);
            if actor.role != Role::Subject {
                continue;
            }
            for counterparty in &sc.actors {
                if matches!(counterparty.role, Role::Controller | Role::Processor) {
                    let seed = format!("{}::{}", actor.key_seed, counterparty.name);
                    let identity = Identity::new(&seed);
                    config.genesis_accounts.insert(identity.address(), ENDOWMENT);
                    pairs.insert((actor.name.clone(), counterparty.name.clone()), identity);
                }
            }
        }
        let mut chain = Chain::new(config);
        if sc.censor.drop_withdrawals {
            let deactivate = selector("deactivate");
            chain.set_censor(Box::new(move |tx| {
                matches!(&tx.tx.payload, TxPayload::Call { selector, .. } if *selector == deactivate)
            }));
        }
        Ok(Runner {
            sc,
            rng: ChaCha20Rng::seed_from_u64(seed),
            chain,
            roots,
            pairs,
            contracts: BTreeMap::new(),
            ledger: GasLedger::default(),
            decisions: Vec::new(),
            graphs: BTreeMap::new(),
            deadlines: Vec::new(),
            failures: Vec::new(),
            log: Vec::new(),
            trace: Vec::new(),
        })
    }

    fn run(mut self) -> Result<RunOutput, RunError> {
        for index in 0..self.sc.timeline.len() {
            let step = self.sc.timeline[index].clone();
            self.trace
                .push(format!("step {index}: {} @ tick {}", step.name(), step.tick()));
            self.execute(index, &step)?;
            self.check_deadlines();
        }
        self.close_out();

        let bundle = self.bundle();
        let report = self
            .ledger
            .into_report(&self.sc.name, self.sc.conversion);
        Ok(RunOutput {
            chain: self.chain,
            report,
            decisions: self.decisions,
            graphs: self.graphs,
            bundle,
            failures: self.failures,
            log: self.log,
        })
    }

    fn fresh_nonce(&mut self) -> Nonce32 {
        let mut bytes = [0u8; 32];
        self.rng.fill_bytes(&mut bytes);
        Nonce32(bytes)
    }

    fn seal_all(&mut self) -> Result<(), RunError> {
        while self.chain.pending_len() > 0 {
            let at = self.chain.latest().timestamp + self.chain.config().block_interval_secs;
            let sealed_empty = self
                .chain
                .seal_block(at)
                .map_err(|err| RunError::Fatal(format!("sealing failed: {err}")))?
                .txs
                .is_empty();
            if sealed_empty && self.chain.pending_len() > 0 {
                return Err(RunError::Fatal(
                    "a pending transaction exceeds the block gas limit".into(),
                ));
            }
        }
        Ok(())
    }

    /// Submit one transaction from an identity, seal, and return its
    /// receipt. `None` means the pool censored it.
    fn exec(
        &mut self,
        who: Who,
        gas_limit: u64,
        payload: TxPayload,
    ) -> Result<Option<(Hash32, Receipt)>, RunError> {
        let identity = self.identity_mut(&who);
        let tx = Transaction {
            sender_keys: identity.keys.public(),
            nonce: identity.next_nonce,
            gas_limit,
            payload,
        };
        identity.next_nonce += 1;
        let signed = tx.sign(&identity.keys);
        let hash = self
            .chain
            .submit(signed)
            .map_err(|err| RunError::Fatal(format!("submit failed: {err}")))?;
        self.seal_all()?;
        Ok(self.chain.receipt(&hash).cloned().map(|r| (hash, r)))
    }

    fn identity_mut(&mut self, who: &Who) -> &mut Identity {
        match who {
            Who::Root(name) => self.roots.get_mut(name).expect("validated actor"),
            Who::Pair(subject, counterparty) => self
                .pairs
                .get_mut(&(subject.clone(), counterparty.clone()))
                .expect("pair identities are derived for all subject pairs"),
        }
    }

    fn identity(&self, who: &Who) -> &Identity {
        match who {
            Who::Root(name) => self.roots.get(name).expect("validated actor"),
            Who::Pair(subject, counterparty) => self
                .pairs
                .get(&(subject.clone(), counterparty.clone()))
                .expect("pair identities are derived for all subject pairs"),
        }
    }

    fn record_gas(&mut self, label: Option<&str>, baseline: Option<u64>, gas: u64) {
        if let Some(label) = label {
            self.ledger.record(label, baseline, gas);
        }
    }

    fn fail(&mut self, index: usize, message: impl Into<String>) {
        let message = message.into();
        self.failures.push(format!("step {index}: {message}"));
        self.trace.push(format!("  FAILED: {message}"));
    }

    fn note(&mut self, line: String) {
        self.trace.push(format!("  {line}"));
        self.log.push(line);
    }

    fn execute(&mut self, index: usize, step: &StepSpec) -> Result<(), RunError> {
        match step {
            StepSpec::Deploy {
                tick,
                contract,
                kind,
                subject,
                controller,
                policy,
                storage_mode,
                join_mode,
                default,
                grant,
                label,
                paper_gas,
            } => match kind {
                ContractKind::Subject => self.deploy_subject(
                    index,
                    DeploySubject {
                        tick: *tick,
                        label: contract.clone(),
                        subject: subject.clone().expect("validated"),
                        counterparty: controller.clone(),
                        counterparty_role: RecipientRole::Controller,
                        policy_text: self.policy_text(controller, policy),
                        storage_mode: storage_mode.unwrap_or(StorageMode::StateVariables),
                        join_mode: join_mode.unwrap_or(JoinMode::AutoJoin),
                        default: default.unwrap_or(DefaultDecision::Deny),
                        paths: grant.clone(),
                        parent: None,
                        prov_parent: None,
                        gas_label: label.clone(),
                        paper_gas: *paper_gas,
                    },
                ),
                ContractKind::Controller => self.deploy_controller(
                    index,
                    *tick,
                    contract,
                    controller,
                    &self.policy_text(controller, policy),
                    join_mode.unwrap_or(JoinMode::AutoJoin),
                    label.as_deref(),
                    *paper_gas,
                ),
            },
            StepSpec::GrantData {
                tick,
                contract,
                paths,
                child,
                label,
                paper_gas,
            } => self.grant_data(index, *tick, contract, paths, child, label.as_deref(), *paper_gas),
            StepSpec::UsageEvent {
                tick,
                contract,
                activity,
                attrs,
                expect,
                perform_anyway,
                label,
                paper_gas,
            } => self.usage_event(
                index,
                *tick,
                contract,
                activity,
                attrs,
                *expect,
                *perform_anyway,
                label.as_deref(),
                *paper_gas,
            ),
            StepSpec::Transfer {
                tick,
                contract,
                processor,
                activity,
                attrs,
                expect,
                label,
                paper_gas,
            } => self.transfer(
                index,
                *tick,
                contract,
                processor,
                activity,
                attrs,
                *expect,
                label.as_deref(),
                *paper_gas,
            ),
            StepSpec::TimeStep {
                tick,
                contract,
                by,
                expect_violation,
                label,
            } => self.time_step(
                index,
                *tick,
                contract,
                by.unwrap_or(Party::Subject),
                *expect_violation,
                label.as_deref(),
            ),
            StepSpec::Join {
                tick,
                contract,
                member,
                label,
                paper_gas,
            } => self.membership(index, *tick, contract, member, true, label.as_deref(), *paper_gas),
            StepSpec::Leave {
                tick,
                contract,
                member,
                label,
                paper_gas,
            } => self.membership(index, *tick, contract, member, false, label.as_deref(), *paper_gas),
            StepSpec::BulkEvent {
                tick,
                contract,
                template,
                activity,
                attrs,
                label,
                paper_gas,
            } => self.bulk_event(
                index,
                *tick,
                contract,
                *template,
                activity,
                attrs,
                label.as_deref(),
                *paper_gas,
            ),
            StepSpec::Withdraw {
                tick,
                contract,
                label,
            } => self.withdraw(index, *tick, contract, label.as_deref()),
            StepSpec::Tamper { target, .. } => {
                match self.chain.tamper(target) {
                    Ok(()) => self.note(format!("tampered with the chain: {target:?}")),
                    Err(err) => self.fail(index, format!("tamper step: {err}")),
                }
                Ok(())
            }
        }
    }

    fn policy_text(&self, actor: &str, policy: &str) -> String {
        self.sc
            .actor(actor)
            .and_then(|a| a.policies.get(policy))
            .cloned()
            .expect("policy references are validated")
    }

    fn deploy_subject(&mut self, index: usize, spec: DeploySubject) -> Result<(), RunError> {
        let nonce = match &spec.parent {
            Some(parent) => self.contracts[parent].nonce,
            None => self.fresh_nonce(),
        };
        let subject_actor = self
            .sc
            .actor(&spec.subject)
            .expect("validated actor")
            .clone();

        let mut grants = Vec::new();
        let mut data_refs = Vec::new();
        for path in &spec.paths {
            let instance = subject_actor
                .data
                .iter()
                .find(|d| &d.path == path)
                .expect("grant paths are validated")
                .clone();
            let reference = commit_data(&self.sc.data_model, &instance, &nonce)
                .map_err(|err| RunError::Fatal(format!("commitment failed: {err}")))?;
            data_refs.push(reference);
            grants.push(GrantRecord {
                reference,
                instance,
                tx_hash: Hash32::ZERO,
            });
        }

        let mechanisms = parse_policy(&spec.policy_text)
            .expect("policy texts are validated")
            .mechanisms();
        let mut layout = subject_layout();
        let policy = compile_policy(&mechanisms, &nonce, spec.default, &mut layout)
            .map_err(|err| RunError::Fatal(format!("policy does not compile: {err}")))?;

        let who = Who::Pair(spec.subject.clone(), spec.counterparty.clone());
        let subject_addr = self.identity(&who).address();
        let counterparty_addr = self.roots[&spec.counterparty].address();
        let counterparty_keys = self.roots[&spec.counterparty].keys.public();
        let sealed_nonce = counterparty_keys
            .seal(&mut self.rng, &nonce.0)
            .map_err(|err| RunError::Fatal(format!("sealing the nonce failed: {err}")))?;
        let parent_addr = spec
            .parent
            .as_ref()
            .map(|parent| self.contracts[parent].address);

        let blueprint = Blueprint {
            code_size: self.sc.calibration.subject_code_size,
            logic: BlueprintLogic::Subject(Box::new(SubjectInit {
                subject: subject_addr,
                controller: counterparty_addr,
                sealed_nonce,
                data_refs,
                storage_mode: spec.storage_mode,
                policy,
                parent: parent_addr,
                join_mode: spec.join_mode,
                deploy_tick: spec.tick,
                init_event: obfuscate_event(&init_marker(), &nonce),
                time_step_event: obfuscate_event(&time_step_marker(), &nonce),
            })),
        };
        let gas_limit = self.chain.config().block_gas_limit;
        let Some((tx_hash, receipt)) = self.exec(who, gas_limit, TxPayload::Deploy { blueprint })?
        else {
            return Err(RunError::Fatal("deploy transaction censored".into()));
        };
        if receipt.status != TxStatus::Success {
            return Err(RunError::Fatal(format!(
                "step {index}: deploy of {} failed: {:?}",
                spec.label, receipt.status
            )));
        }
        let address = receipt.created.expect("successful deploys create");
        self.record_gas(spec.gas_label.as_deref(), spec.paper_gas, receipt.gas_used);
        self.note(format!(
            "[tick {}] deploy {} at {} (subject {} x {}), gas {}",
            spec.tick, spec.label, address, spec.subject, spec.counterparty, receipt.gas_used
        ));

        for grant in &mut grants {
            grant.tx_hash = tx_hash;
        }
        // A data-grant child extends the existing recipient entry; the graph
        // keeps one entry per recipient, anchored to the first contract.
        let prov_contract = match &spec.parent {
            Some(parent) => self.contracts[parent].address,
            None => address,
        };
        self.graphs
            .entry(spec.subject.clone())
            .or_default()
            .record_transfer(
                counterparty_addr,
                spec.counterparty_role,
                prov_contract,
                nonce,
                grants.clone(),
                spec.prov_parent,
            )
            .map_err(|err| RunError::Fatal(format!("provenance: {err}")))?;

        let mut oracle = Interpreter::new(mechanisms, spec.default, spec.tick)
            .map_err(|err| RunError::Fatal(format!("oracle setup: {err}")))?;
        oracle
            .record_actual(&init_marker(), spec.tick)
            .expect("deploy tick starts the clock");

        self.contracts.insert(
            spec.label.clone(),
            ContractRt {
                label: spec.label.clone(),
                kind: ContractKind::Subject,
                address,
                subject: Some(spec.subject.clone()),
                counterparty: spec.counterparty.clone(),
                nonce,
                policy_text: spec.policy_text.clone(),
                default: spec.default,
                deploy_tick: spec.tick,
                oracle: Some(oracle),
                grants,
                requests: Vec::new(),
                performed: Vec::new(),
                members_ever: BTreeSet::new(),
                active: true,
            },
        );

        if let Some(parent) = &spec.parent {
            let parent_rt = &self.contracts[parent];
            let parent_address = parent_rt.address;
            let who = Who::Pair(spec.subject.clone(), parent_rt.counterparty.clone());
            let result = self.exec(
                who,
                CALL_GAS,
                TxPayload::Call {
                    to: parent_address,
                    selector: selector("addChildContract"),
                    args: vec![AbiValue::Addr(address)],
                },
            )?;
            match result {
                Some((_, receipt)) if receipt.status == TxStatus::Success => {
                    self.note(format!("linked {} under {parent}", spec.label));
                }
                Some((_, receipt)) => {
                    self.fail(index, format!("child link failed: {:?}", receipt.status))
                }
                None => self.fail(index, "child link censored"),
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn deploy_controller(
        &mut self,
        index: usize,
        tick: u64,
        label: &str,
        controller: &str,
        policy_text: &str,
        join_mode: JoinMode,
        gas_label: Option<&str>,
        paper_gas: Option<u64>,
    ) -> Result<(), RunError> {
        let nonce = self.fresh_nonce();
        let controller_addr = self.roots[controller].address();
        let blueprint = Blueprint {
            code_size: self.sc.calibration.controller_code_size,
            logic: BlueprintLogic::Controller(ControllerInit {
                controller: controller_addr,
                template_text: policy_text.to_string(),
                join_mode,
            }),
        };
        let gas_limit = self.chain.config().block_gas_limit;
        let Some((_, receipt)) =
            self.exec(Who::Root(controller.to_string()), gas_limit, TxPayload::Deploy { blueprint })?
        else {
            return Err(RunError::Fatal("deploy transaction censored".into()));
        };
        if receipt.status != TxStatus::Success {
            return Err(RunError::Fatal(format!(
                "step {index}: deploy of {label} failed: {:?}",
                receipt.status
            )));
        }
        let address = receipt.created.expect("successful deploys create");
        self.record_gas(gas_label, paper_gas, receipt.gas_used);
        self.note(format!(
            "[tick {tick}] deploy {label} at {address} (controller {controller}), gas {}",
            receipt.gas_used
        ));
        self.contracts.insert(
            label.to_string(),
            ContractRt {
                label: label.to_string(),
                kind: ContractKind::Controller,
                address,
                subject: None,
                counterparty: controller.to_string(),
                nonce,
                policy_text: policy_text.to_string(),
                default: DefaultDecision::Deny,
                deploy_tick: tick,
                oracle: None,
                grants: Vec::new(),
                requests: Vec::new(),
                performed: Vec::new(),
                members_ever: BTreeSet::new(),
                active: true,
            },
        );
        Ok(())
    }

    fn grant_data(
        &mut self,
        index: usize,
        tick: u64,
        parent: &str,
        paths: &[String],
        child: &str,
        label: Option<&str>,
        paper_gas: Option<u64>,
    ) -> Result<(), RunError> {
        let parent_rt = &self.contracts[parent];
        let spec = DeploySubject {
            tick,
            label: child.to_string(),
            subject: parent_rt.subject.clone().expect("subject contract"),
            counterparty: parent_rt.counterparty.clone(),
            counterparty_role: RecipientRole::Controller,
            policy_text: parent_rt.policy_text.clone(),
            storage_mode: StorageMode::StateVariables,
            join_mode: JoinMode::AutoJoin,
            default: parent_rt.default,
            paths: paths.to_vec(),
            parent: Some(parent.to_string()),
            prov_parent: None,
            gas_label: label.map(str::to_string),
            paper_gas,
        };
        self.deploy_subject(index, spec)
    }

    /// Decode the (kind, delay, substitutions) triple contract calls return.
    fn decode_decision(values: &[AbiValue]) -> Option<(u8, u64, Vec<(Hash32, Hash32)>)> {
        let kind = u8::try_from(values.first()?.as_u64()?).ok()?;
        let delay = values.get(1)?.as_u64()?;
        let subs = decode_pairs(values.get(2)?.as_bytes()?)?;
        Some((kind, delay, subs))
    }

    fn oracle_digests(decision: &Decision, nonce: &Nonce32) -> Vec<(Hash32, Hash32)> {
        let mut subs: Vec<(Hash32, Hash32)> = decision
            .substitutions
            .iter()
            .map(|(name, value)| {
                (
                    attr_name_digest(name, nonce),
                    attr_value_digest(name, value, nonce),
                )
            })
            .collect();
        subs.sort();
        subs
    }

    fn divergence(
        &self,
        contract: &ContractRt,
        event: &Event,
        tick: u64,
        oracle: &Decision,
        chain_kind: u8,
        chain_delay: u64,
        detail: &str,
    ) -> RunError {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "contract {} at tick {tick}, event {} {:?}:",
            contract.label, event.activity, event.attrs
        );
        let _ = writeln!(
            out,
            "  interpreter: {:?} delay {}, contract: kind byte {chain_kind} delay {chain_delay} ({detail})",
            oracle.kind, oracle.delay_ticks
        );
        let _ = writeln!(out, "policy:\n{}", contract.policy_text);
        let _ = writeln!(out, "run trace:");
        for line in &self.trace {
            let _ = writeln!(out, "  {line}");
        }
        RunError::Divergence(out)
    }

    /// The read-only probe and the oracle must agree before anything is
    /// submitted; this is the paper's "check first, then notify" flow.
    fn cross_check_probe(
        &mut self,
        contract_label: &str,
        event: &Event,
        tick: u64,
    ) -> Result<Decision, RunError> {
        let contract = &self.contracts[contract_label];
        let oracle_decision = contract
            .oracle
            .as_ref()
            .expect("subject contracts carry an oracle")
            .probe(event, tick)
            .map_err(|err| RunError::Fatal(format!("oracle probe: {err}")))?;
        let obf = obfuscate_event(event, &contract.nonce);
        let args = vec![
            AbiValue::B32(obf.activity),
            AbiValue::U64(tick),
            AbiValue::Bytes(encode_pairs(&obf.attrs)),
        ];
        let caller = self.roots[&contract.counterparty].address();
        let out = self
            .chain
            .query(contract.address, caller, selector("checkEvent"), &args)
            .map_err(|err| RunError::Fatal(format!("checkEvent query: {err}")))?;
        let (kind, delay, subs) =
            Self::decode_decision(&out).ok_or_else(|| RunError::Fatal("bad probe reply".into()))?;
        let oracle_subs = Self::oracle_digests(&oracle_decision, &contract.nonce);
        let mut chain_subs = subs;
        chain_subs.sort();
        if kind != decision_kind_byte(oracle_decision.kind)
            || delay != oracle_decision.delay_ticks
            || oracle_subs != chain_subs
        {
            return Err(self.divergence(
                contract,
                event,
                tick,
                &oracle_decision,
                kind,
                delay,
                "checkEvent probe",
            ));
        }
        Ok(oracle_decision)
    }

    #[allow(clippy::too_many_arguments)]
    fn usage_event(
        &mut self,
        index: usize,
        tick: u64,
        contract_label: &str,
        activity: &str,
        attrs: &BTreeMap<String, String>,
        expect: Option<ActionKind>,
        perform_anyway: bool,
        label: Option<&str>,
        paper_gas: Option<u64>,
    ) -> Result<(), RunError> {
        let event = Event::new(activity, attrs.clone());
        self.cross_check_probe(contract_label, &event, tick)?;

        let contract = self.contracts.get_mut(contract_label).expect("validated");
        let oracle_decision = contract
            .oracle
            .as_mut()
            .expect("subject contract")
            .notify(&event, tick)
            .map_err(|err| RunError::Fatal(format!("oracle notify: {err}")))?;
        contract.requests.push(journal(&event, tick));
        if oracle_decision.permits() {
            let performed = oracle_decision.apply_to(&event);
            contract.performed.push(journal(&performed, tick));
        } else if perform_anyway {
            contract.performed.push(journal(&event, tick));
            let activity = event.activity.clone();
            self.note(format!(
                "[tick {tick}] {contract_label}: {activity} performed off-chain despite the decision"
            ));
        }

        let contract = &self.contracts[contract_label];
        let obf = obfuscate_event(&event, &contract.nonce);
        let address = contract.address;
        let nonce = contract.nonce;
        let who = Who::Root(contract.counterparty.clone());
        let result = self.exec(
            who,
            CALL_GAS,
            TxPayload::Call {
                to: address,
                selector: selector("notifyEvent"),
                args: event_args(&obf, tick),
            },
        )?;
        let Some((_, receipt)) = result else {
            self.fail(index, "usage notification censored");
            return Ok(());
        };
        if receipt.status != TxStatus::Success {
            self.fail(index, format!("notifyEvent failed: {:?}", receipt.status));
            return Ok(());
        }
        let (kind, delay, mut subs) = Self::decode_decision(&receipt.return_values)
            .ok_or_else(|| RunError::Fatal("bad notifyEvent reply".into()))?;
        subs.sort();
        let oracle_subs = Self::oracle_digests(&oracle_decision, &nonce);
        if kind != decision_kind_byte(oracle_decision.kind)
            || delay != oracle_decision.delay_ticks
            || subs != oracle_subs
        {
            let contract = &self.contracts[contract_label];
            return Err(self.divergence(
                contract,
                &event,
                tick,
                &oracle_decision,
                kind,
                delay,
                "notifyEvent",
            ));
        }

        self.record_gas(label, paper_gas, receipt.gas_used);
        self.decisions.push(DecisionRow {
            step: index,
            contract: contract_label.to_string(),
            tick,
            activity: activity.to_string(),
            kind: oracle_decision.kind,
            delay_ticks: oracle_decision.delay_ticks,
        });
        self.note(format!(
            "[tick {tick}] {contract_label}: {activity} -> {:?}, gas {}",
            oracle_decision.kind, receipt.gas_used
        ));
        if let Some(expected) = expect {
            if oracle_decision.kind != expected {
                self.fail(
                    index,
                    format!("expected {expected:?}, contract decided {:?}", oracle_decision.kind),
                );
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn transfer(
        &mut self,
        index: usize,
        tick: u64,
        contract_label: &str,
        processor: &str,
        activity: &str,
        attrs: &BTreeMap<String, String>,
        expect: Option<ActionKind>,
        label: Option<&str>,
        paper_gas: Option<u64>,
    ) -> Result<(), RunError> {
        let event = Event::new(activity, attrs.clone());
        self.cross_check_probe(contract_label, &event, tick)?;

        let contract = self.contracts.get_mut(contract_label).expect("validated");
        let oracle_decision = contract
            .oracle
            .as_mut()
            .expect("subject contract")
            .notify(&event, tick)
            .map_err(|err| RunError::Fatal(format!("oracle notify: {err}")))?;
        contract.requests.push(journal(&event, tick));
        if oracle_decision.permits() {
            contract.performed.push(journal(&oracle_decision.apply_to(&event), tick));
        }

        let contract = &self.contracts[contract_label];
        let subject = contract.subject.clone().expect("subject contract");
        let address = contract.address;
        let nonce = contract.nonce;
        let counterparty = contract.counterparty.clone();

        // The controller seals the processor's address for the subject; only
        // the subject's pair key can open it.
        let processor_addr = self.roots[processor].address();
        let subject_pair = Who::Pair(subject.clone(), counterparty.clone());
        let subject_keys = self.identity(&subject_pair).keys.public();
        let sealed = subject_keys
            .seal(&mut self.rng, &processor_addr.0)
            .map_err(|err| RunError::Fatal(format!("sealing failed: {err}")))?;

        let obf = obfuscate_event(&event, &nonce);
        let mut args = event_args(&obf, tick);
        args.push(AbiValue::Bytes(sealed));
        let result = self.exec(
            Who::Root(counterparty.clone()),
            CALL_GAS,
            TxPayload::Call {
                to: address,
                selector: selector("requestTransfer"),
                args,
            },
        )?;
        let Some((_, receipt)) = result else {
            self.fail(index, "transfer request censored");
            return Ok(());
        };
        if receipt.status != TxStatus::Success {
            self.fail(index, format!("requestTransfer failed: {:?}", receipt.status));
            return Ok(());
        }
        let permitted = receipt
            .return_values
            .first()
            .and_then(AbiValue::as_bool)
            .unwrap_or(false);
        if permitted != oracle_decision.permits() {
            return Err(self.divergence(
                &self.contracts[contract_label],
                &event,
                tick,
                &oracle_decision,
                u8::from(!permitted),
                0,
                "requestTransfer permit flag",
            ));
        }
        self.record_gas(label, paper_gas, receipt.gas_used);
        self.decisions.push(DecisionRow {
            step: index,
            contract: contract_label.to_string(),
            tick,
            activity: activity.to_string(),
            kind: oracle_decision.kind,
            delay_ticks: oracle_decision.delay_ticks,
        });
        self.note(format!(
            "[tick {tick}] {contract_label}: transfer {activity} -> {:?}, gas {}",
            oracle_decision.kind, receipt.gas_used
        ));
        if let Some(expected) = expect {
            if oracle_decision.kind != expected {
                self.fail(
                    index,
                    format!("expected {expected:?}, contract decided {:?}", oracle_decision.kind),
                );
            }
        }
        if !permitted {
            return Ok(());
        }

        // The subject reads the sealed payload off the transfer log, opens
        // it, and contracts the processor under a fresh identity and nonce.
        let topic = contracts::transfer_event_topic();
        let sealed_payload = receipt
            .logs
            .iter()
            .filter(|log| log.topics.first() == Some(&topic))
            .find_map(contracts::parse_transfer_log)
            .map(|(_, payload)| payload)
            .ok_or_else(|| RunError::Fatal("permitted transfer left no log".into()))?;
        let opened = self
            .identity(&subject_pair)
            .keys
            .unseal(&sealed_payload)
            .map_err(|err| RunError::Fatal(format!("subject cannot open the payload: {err}")))?;
        if opened.as_slice() != processor_addr.0.as_slice() {
            self.fail(index, "sealed payload does not name the processor");
            return Ok(());
        }

        let controller_addr = self.roots[&counterparty].address();
        let parent_rt = &self.contracts[contract_label];
        let child_label = unique_label(&self.contracts, &format!("{contract_label}:{processor}"));
        let spec = DeploySubject {
            tick,
            label: child_label,
            subject,
            counterparty: processor.to_string(),
            counterparty_role: RecipientRole::Processor,
            policy_text: parent_rt.policy_text.clone(),
            storage_mode: StorageMode::StateVariables,
            join_mode: JoinMode::AutoJoin,
            default: parent_rt.default,
            paths: parent_rt
                .grants
                .iter()
                .map(|g| g.instance.path.clone())
                .collect(),
            parent: None,
            prov_parent: Some(controller_addr),
            gas_label: label.map(|l| format!("{l}:processor-deploy")),
            paper_gas: None,
        };
        self.deploy_subject(index, spec)
    }

    fn time_step(
        &mut self,
        index: usize,
        tick: u64,
        contract_label: &str,
        by: Party,
        expect_violation: Option<bool>,
        label: Option<&str>,
    ) -> Result<(), RunError> {
        let contract = self.contracts.get_mut(contract_label).expect("validated");
        let oracle = contract.oracle.as_mut().expect("subject contract");
        let expected = oracle
            .first_match(&time_step_marker(), tick)
            .map_err(|err| RunError::Fatal(format!("oracle time step: {err}")))?
            .filter(|d| !d.permits());
        oracle
            .advance(tick)
            .map_err(|err| RunError::Fatal(format!("oracle advance: {err}")))?;

        let contract = &self.contracts[contract_label];
        let address = contract.address;
        let who = match by {
            Party::Subject => Who::Pair(
                contract.subject.clone().expect("subject contract"),
                contract.counterparty.clone(),
            ),
            Party::Controller => Who::Root(contract.counterparty.clone()),
        };
        let result = self.exec(
            who,
            CALL_GAS,
            TxPayload::Call {
                to: address,
                selector: selector("notifyTimeStep"),
                args: vec![AbiValue::U64(tick)],
            },
        )?;
        let Some((_, receipt)) = result else {
            self.fail(index, "time step censored");
            return Ok(());
        };
        if receipt.status != TxStatus::Success {
            self.fail(index, format!("notifyTimeStep failed: {:?}", receipt.status));
            return Ok(());
        }
        let violated = receipt
            .return_values
            .first()
            .and_then(AbiValue::as_bool)
            .unwrap_or(false);
        if violated != expected.is_some() {
            let marker = time_step_marker();
            let stand_in = expected.clone().unwrap_or_else(Decision::allow);
            return Err(self.divergence(
                &self.contracts[contract_label],
                &marker,
                tick,
                &stand_in,
                u8::from(violated),
                0,
                "notifyTimeStep violation flag",
            ));
        }
        if let Some(decision) = &expected {
            self.decisions.push(DecisionRow {
                step: index,
                contract: contract_label.to_string(),
                tick,
                activity: "timeStep".into(),
                kind: decision.kind,
                delay_ticks: decision.delay_ticks,
            });
            self.note(format!(
                "[tick {tick}] {contract_label}: time step flagged a {:?} violation",
                decision.kind
            ));
        }
        self.record_gas(label, None, receipt.gas_used);
        if let Some(wanted) = expect_violation {
            if violated != wanted {
                self.fail(
                    index,
                    format!("expected violation={wanted}, contract reported {violated}"),
                );
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn membership(
        &mut self,
        index: usize,
        tick: u64,
        contract_label: &str,
        member: &str,
        joining: bool,
        label: Option<&str>,
        paper_gas: Option<u64>,
    ) -> Result<(), RunError> {
        let members: Vec<String> = self
            .sc
            .members(member)
            .iter()
            .map(|a| a.name.clone())
            .collect();
        let contract = &self.contracts[contract_label];
        let address = contract.address;
        let counterparty = contract.counterparty.clone();
        let function = if joining { "join" } else { "leave" };

        let mut hashes = Vec::new();
        for name in &members {
            let who = Who::Pair(name.clone(), counterparty.clone());
            let identity = self.identity_mut(&who);
            let tx = Transaction {
                sender_keys: identity.keys.public(),
                nonce: identity.next_nonce,
                gas_limit: CALL_GAS,
                payload: TxPayload::Call {
                    to: address,
                    selector: selector(function),
                    args: vec![],
                },
            };
            identity.next_nonce += 1;
            let signed = tx.sign(&identity.keys);
            let member_addr = identity.address();
            let hash = self
                .chain
                .submit(signed)
                .map_err(|err| RunError::Fatal(format!("submit failed: {err}")))?;
            hashes.push((name.clone(), member_addr, hash));
        }
        self.seal_all()?;

        let mut total_gas = 0u64;
        for (name, member_addr, hash) in hashes {
            let Some(receipt) = self.chain.receipt(&hash).cloned() else {
                self.fail(index, format!("{function} by {name} censored"));
                continue;
            };
            if receipt.status != TxStatus::Success {
                self.fail(
                    index,
                    format!("{function} by {name} failed: {:?}", receipt.status),
                );
                continue;
            }
            total_gas += receipt.gas_used;
            self.record_gas(label, paper_gas, receipt.gas_used);
            if joining {
                let contract = self.contracts.get_mut(contract_label).expect("validated");
                contract.members_ever.insert(member_addr);
            }
        }
        self.note(format!(
            "[tick {tick}] {contract_label}: {} member(s) {function}, total gas {total_gas}",
            members.len()
        ));
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn bulk_event(
        &mut self,
        index: usize,
        tick: u64,
        contract_label: &str,
        template: u64,
        activity: &str,
        attrs: &BTreeMap<String, String>,
        label: Option<&str>,
        paper_gas: Option<u64>,
    ) -> Result<(), RunError> {
        let contract = &self.contracts[contract_label];
        let address = contract.address;
        let nonce = contract.nonce;
        let counterparty = contract.counterparty.clone();
        let event = Event::new(activity, attrs.clone());
        let obf = obfuscate_event(&event, &nonce);
        let result = self.exec(
            Who::Root(counterparty),
            CALL_GAS,
            TxPayload::Call {
                to: address,
                selector: selector("logBulkEvent"),
                args: vec![
                    AbiValue::U64(template),
                    AbiValue::B32(obf.activity),
                    AbiValue::Bytes(encode_pairs(&obf.attrs)),
                    AbiValue::U64(tick),
                ],
            },
        )?;
        match result {
            Some((_, receipt)) if receipt.status == TxStatus::Success => {
                self.record_gas(label, paper_gas, receipt.gas_used);
                self.note(format!(
                    "[tick {tick}] {contract_label}: bulk {activity} under template {template}, gas {}",
                    receipt.gas_used
                ));
            }
            Some((_, receipt)) => {
                self.fail(index, format!("logBulkEvent failed: {:?}", receipt.status))
            }
            None => self.fail(index, "bulk event censored"),
        }
        Ok(())
    }

    fn withdraw(
        &mut self,
        index: usize,
        tick: u64,
        contract_label: &str,
        label: Option<&str>,
    ) -> Result<(), RunError> {
        let contract = &self.contracts[contract_label];
        let address = contract.address;
        let who = Who::Pair(
            contract.subject.clone().expect("subject contract"),
            contract.counterparty.clone(),
        );
        let deadline_blocks = self.sc.censor.inclusion_deadline_blocks;
        let identity = self.identity_mut(&who);
        let tx = Transaction {
            sender_keys: identity.keys.public(),
            nonce: identity.next_nonce,
            gas_limit: CALL_GAS,
            payload: TxPayload::Call {
                to: address,
                selector: selector("deactivate"),
                args: vec![],
            },
        };
        identity.next_nonce += 1;
        let signed = tx.sign(&identity.keys);
        let hash = self
            .chain
            .submit(signed)
            .map_err(|err| RunError::Fatal(format!("submit failed: {err}")))?;
        self.deadlines.push((
            hash,
            format!("withdrawal of {contract_label} (submitted step {index})"),
            self.chain.height() + deadline_blocks,
        ));
        self.seal_all()?;

        match self.chain.receipt(&hash).cloned() {
            None => {
                self.note(format!(
                    "[tick {tick}] {contract_label}: withdrawal submitted, not yet included"
                ));
            }
            Some(receipt) if receipt.status == TxStatus::Success => {
                self.record_gas(label, None, receipt.gas_used);
                let contract = self.contracts.get_mut(contract_label).expect("validated");
                contract.active = false;
                self.note(format!(
                    "[tick {tick}] {contract_label}: consent withdrawn, gas {}",
                    receipt.gas_used
                ));
            }
            Some(receipt) => {
                self.fail(index, format!("deactivate failed: {:?}", receipt.status))
            }
        }
        Ok(())
    }

    fn check_deadlines(&mut self) {
        let height = self.chain.height();
        let mut overdue = Vec::new();
        self.deadlines.retain(|(hash, desc, deadline)| {
            if self.chain.receipt(hash).is_some() {
                return false;
            }
            if height >= *deadline {
                overdue.push(format!(
                    "inclusion deadline passed: {desc} still not on chain at block {height}"
                ));
                return false;
            }
            true
        });
        self.failures.extend(overdue);
    }

    fn close_out(&mut self) {
        for (hash, desc, _) in std::mem::take(&mut self.deadlines) {
            if self.chain.receipt(&hash).is_none() {
                self.failures
                    .push(format!("run ended with {desc} never included"));
            }
        }

        let verify = self.chain.verify();
        if !verify.ok {
            self.failures.push(format!(
                "chain verification failed at block {}: {}",
                verify
                    .first_invalid_block
                    .map(|b| b.to_string())
                    .unwrap_or_else(|| "?".into()),
                verify.reason.unwrap_or_else(|| "unknown".into())
            ));
        }

        for contract in self.contracts.values() {
            if contract.kind != ContractKind::Controller {
                continue;
            }
            let stored = self
                .chain
                .state()
                .contract(&contract.address)
                .map(|c| c.storage.len())
                .unwrap_or(0);
            if stored != contract.members_ever.len() {
                self.failures.push(format!(
                    "{}: membership storage holds {stored} slots for {} members ever joined",
                    contract.label,
                    contract.members_ever.len()
                ));
            }
        }

        for graph in self.graphs.values() {
            if let Err(err) = graph.verify() {
                self.failures.push(format!("provenance graph: {err}"));
            }
        }

        self.check_unlinkability();
    }

    /// Contracts of different subject/counterparty relationships must not
    /// share a single digest value, and a subject must show a different
    /// address to every counterparty. Contracts inside one relationship
    /// (a parent and its data-grant children) may share, since the parties
    /// hold the nonce anyway.
    fn check_unlinkability(&mut self) {
        let mut seen: BTreeMap<Hash32, (String, String)> = BTreeMap::new();
        let mut failures = Vec::new();
        for contract in self.contracts.values() {
            let Some(subject) = &contract.subject else {
                continue;
            };
            let relationship = (subject.clone(), contract.counterparty.clone());
            let mut digests: BTreeSet<Hash32> = BTreeSet::new();
            for grant in &contract.grants {
                digests.insert(grant.reference.instantiation);
                digests.insert(grant.reference.value);
            }
            for request in &contract.requests {
                let obf = obfuscate_event(&request.event(), &contract.nonce);
                digests.insert(obf.activity);
                for (name, value) in obf.attrs {
                    digests.insert(name);
                    digests.insert(value);
                }
            }
            for digest in digests {
                if let Some(other) = seen.insert(digest, relationship.clone()) {
                    if other != relationship {
                        failures.push(format!(
                            "linkable digest appears in contracts of both {}/{} and {}/{}",
                            other.0, other.1, relationship.0, relationship.1
                        ));
                    }
                }
            }
        }
        self.failures.extend(failures);

        let mut by_subject: BTreeMap<&str, BTreeSet<Address>> = BTreeMap::new();
        for ((subject, _), identity) in &self.pairs {
            if !by_subject
                .entry(subject)
                .or_default()
                .insert(identity.address())
            {
                self.failures
                    .push(format!("{subject}: two counterparties share one address"));
            }
        }
    }

    fn bundle(&self) -> AuditBundle {
        let disclosures = self
            .contracts
            .values()
            .filter(|c| c.kind == ContractKind::Subject)
            .map(|c| Disclosure {
                label: c.label.clone(),
                contract: c.address,
                nonce: c.nonce,
                default_decision: c.default,
                deploy_tick: c.deploy_tick,
                policy_text: c.policy_text.clone(),
                data: c.grants.iter().map(|g| g.instance.clone()).collect(),
                requests: c.requests.clone(),
                performed: c.performed.clone(),
            })
            .collect();
        AuditBundle {
            format: BUNDLE_FORMAT.into(),
            scenario: self.sc.name.clone(),
            chain_head: self.chain.latest().hash,
            chain_height: self.chain.height(),
            data_model: self.sc.data_model.clone(),
            disclosures,
        }
    }
}

#[derive(Debug, Clone)]
enum Who {
    Root(String),
    Pair(String, String),
}

struct DeploySubject {
    tick: u64,
    label: String,
    subject: String,
    counterparty: String,
    counterparty_role: RecipientRole,
    policy_text: String,
    storage_mode: StorageMode,
    join_mode: JoinMode,
    default: DefaultDecision,
    paths: Vec<String>,
    /// Parent contract to link the new one under, for data-grant children.
    /// Children stay inside the parent's relationship and reuse its nonce.
    parent: Option<String>,
    /// Controller the data flowed through, for processor contracts.
    prov_parent: Option<Address>,
    gas_label: Option<String>,
    paper_gas: Option<u64>,
}

fn init_marker() -> Event {
    Event::new("__init", [] as [(&str, &str); 0])
}

fn time_step_marker() -> Event {
    Event::new("timeStep", [] as [(&str, &str); 0])
}

fn journal(event: &Event, tick: u64) -> JournalEvent {
    JournalEvent {
        activity: event.activity.clone(),
        attrs: event.attrs.clone(),
        tick,
    }
}

fn event_args(obf: &ObfEvent, tick: u64) -> Vec<AbiValue> {
    vec![
        AbiValue::B32(obf.activity),
        AbiValue::U64(tick),
        AbiValue::Bytes(encode_pairs(&obf.attrs)),
    ]
}

fn unique_label(contracts: &BTreeMap<String, ContractRt>, base: &str) -> String {
    if !contracts.contains_key(base) {
        return base.to_string();
    }
    let mut counter = 2usize;
    loop {
        let candidate = format!("{base}#{counter}");
        if !contracts.contains_key(&candidate) {
            return candidate;
        }
        counter += 1;
    }
}
