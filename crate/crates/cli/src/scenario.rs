//! Scenario files: the schema, the loader, and upfront validation.
//!
//! A scenario is a JSON document describing actors (with key seeds, data
//! instances, and policy files), chain parameters, and a timeline of steps
//! executed in order. Loading resolves policy file paths against the
//! scenario's directory, parses every referenced policy, expands actor
//! groups, and reports all validation problems at once rather than one per
//! run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use accord_core::contracts::{JoinMode, StorageMode};
use accord_core::crypto::Nonce32;
use accord_core::ledger::Tamper;
use accord_core::policy::{parse_policy, ActionKind, DefaultDecision, Policy};
use accord_core::provenance::{commit_data, DataInstance, DataModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Role {
    Subject,
    Controller,
    Processor,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Subject => "subject",
            Role::Controller => "controller",
            Role::Processor => "processor",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ContractKind {
    Subject,
    Controller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Party {
    Subject,
    Controller,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ActorSpec {
    pub name: String,
    pub role: Role,
    pub key_seed: String,
    /// Expands into `name-0 .. name-(count-1)`, one actor per index, each
    /// with a derived key seed.
    #[serde(default)]
    pub count: Option<u32>,
    #[serde(default)]
    pub data: Vec<DataInstance>,
    /// Policy name to file path, relative to the scenario file.
    #[serde(default)]
    pub policies: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ChainParams {
    #[serde(default = "default_block_gas_limit")]
    pub block_gas_limit: u64,
    #[serde(default = "default_block_interval")]
    pub block_interval_secs: u64,
}

fn default_block_gas_limit() -> u64 {
    4_000_000
}

fn default_block_interval() -> u64 {
    10
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            block_gas_limit: default_block_gas_limit(),
            block_interval_secs: default_block_interval(),
        }
    }
}

/// Code-size stand-ins for the compiled contract bodies. The simulator does
/// not compile EVM bytecode, so deployment byte counts are declared here and
/// priced through the regular code-deposit rule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Calibration {
    #[serde(default = "default_subject_code_size")]
    pub subject_code_size: u32,
    #[serde(default = "default_controller_code_size")]
    pub controller_code_size: u32,
}

fn default_subject_code_size() -> u32 {
    3735
}

fn default_controller_code_size() -> u32 {
    1435
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            subject_code_size: default_subject_code_size(),
            controller_code_size: default_controller_code_size(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Conversion {
    #[serde(default = "default_eth_rate")]
    pub eth_per_million_gas: f64,
    #[serde(default = "default_eur_rate")]
    pub eur_per_million_gas: f64,
}

fn default_eth_rate() -> f64 {
    0.02
}

fn default_eur_rate() -> f64 {
    0.8
}

impl Default for Conversion {
    fn default() -> Self {
        Conversion {
            eth_per_million_gas: default_eth_rate(),
            eur_per_million_gas: default_eur_rate(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CensorSpec {
    /// Silently drop consent-withdrawal transactions from the pool. Used to
    /// demonstrate the inclusion-deadline alarm.
    #[serde(default)]
    pub drop_withdrawals: bool,
    #[serde(default = "default_inclusion_deadline")]
    pub inclusion_deadline_blocks: u64,
}

fn default_inclusion_deadline() -> u64 {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "step", rename_all = "camelCase", deny_unknown_fields)]
pub enum StepSpec {
    #[serde(rename_all = "camelCase")]
    Deploy {
        tick: u64,
        /// Label the new contract is referred to by in later steps.
        contract: String,
        kind: ContractKind,
        #[serde(default)]
        subject: Option<String>,
        controller: String,
        /// Name of a policy declared on the controller actor.
        policy: String,
        #[serde(default)]
        storage_mode: Option<StorageMode>,
        #[serde(default)]
        join_mode: Option<JoinMode>,
        #[serde(default)]
        default: Option<DefaultDecision>,
        /// Data paths of the subject committed into the contract.
        #[serde(default)]
        grant: Vec<String>,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        paper_gas: Option<u64>,
    },
    #[serde(rename_all = "camelCase")]
    GrantData {
        tick: u64,
        /// Existing parent contract the new grant extends.
        contract: String,
        paths: Vec<String>,
        /// Label for the child contract carrying the new references.
        child: String,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        paper_gas: Option<u64>,
    },
    #[serde(rename_all = "camelCase")]
    UsageEvent {
        tick: u64,
        contract: String,
        activity: String,
        #[serde(default)]
        attrs: BTreeMap<String, String>,
        #[serde(default)]
        expect: Option<ActionKind>,
        /// Dishonest-controller hook: execute the activity off-chain even
        /// when the contract denies it.
        #[serde(default)]
        perform_anyway: bool,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        paper_gas: Option<u64>,
    },
    #[serde(rename_all = "camelCase")]
    Transfer {
        tick: u64,
        contract: String,
        processor: String,
        activity: String,
        #[serde(default)]
        attrs: BTreeMap<String, String>,
        #[serde(default)]
        expect: Option<ActionKind>,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        paper_gas: Option<u64>,
    },
    #[serde(rename_all = "camelCase")]
    TimeStep {
        tick: u64,
        contract: String,
        #[serde(default)]
        by: Option<Party>,
        #[serde(default)]
        expect_violation: Option<bool>,
        #[serde(default)]
        label: Option<String>,
    },
    #[serde(rename_all = "camelCase")]
    Join {
        tick: u64,
        contract: String,
        /// Actor name, or `prefix-*` to expand a whole actor group.
        member: String,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        paper_gas: Option<u64>,
    },
    #[serde(rename_all = "camelCase")]
    Leave {
        tick: u64,
        contract: String,
        member: String,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        paper_gas: Option<u64>,
    },
    #[serde(rename_all = "camelCase")]
    BulkEvent {
        tick: u64,
        contract: String,
        /// Index into the policy text's items.
        template: u64,
        activity: String,
        #[serde(default)]
        attrs: BTreeMap<String, String>,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        paper_gas: Option<u64>,
    },
    #[serde(rename_all = "camelCase")]
    Withdraw {
        tick: u64,
        contract: String,
        #[serde(default)]
        label: Option<String>,
    },
    /// Test-only: corrupt the sealed chain in place so the closing
    /// verification pass has something to catch.
    #[serde(rename_all = "camelCase")]
    Tamper { tick: u64, target: Tamper },
}

impl StepSpec {
    pub fn tick(&self) -> u64 {
        match self {
            StepSpec::Deploy { tick, .. }
            | StepSpec::GrantData { tick, .. }
            | StepSpec::UsageEvent { tick, .. }
            | StepSpec::Transfer { tick, .. }
            | StepSpec::TimeStep { tick, .. }
            | StepSpec::Join { tick, .. }
            | StepSpec::Leave { tick, .. }
            | StepSpec::BulkEvent { tick, .. }
            | StepSpec::Withdraw { tick, .. }
            | StepSpec::Tamper { tick, .. } => *tick,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StepSpec::Deploy { .. } => "deploy",
            StepSpec::GrantData { .. } => "grantData",
            StepSpec::UsageEvent { .. } => "usageEvent",
            StepSpec::Transfer { .. } => "transfer",
            StepSpec::TimeStep { .. } => "timeStep",
            StepSpec::Join { .. } => "join",
            StepSpec::Leave { .. } => "leave",
            StepSpec::BulkEvent { .. } => "bulkEvent",
            StepSpec::Withdraw { .. } => "withdraw",
            StepSpec::Tamper { .. } => "tamper",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    chain: ChainParams,
    /// Wall-clock duration of one tick; informational.
    #[serde(default = "default_tick_seconds")]
    tick_seconds: u64,
    #[serde(default)]
    calibration: Calibration,
    #[serde(default)]
    conversion: Conversion,
    #[serde(default)]
    censor: CensorSpec,
    #[serde(default)]
    data_model: DataModel,
    actors: Vec<ActorSpec>,
    timeline: Vec<StepSpec>,
}

fn default_tick_seconds() -> u64 {
    86_400
}

/// One concrete actor after group expansion, with policy texts loaded.
#[derive(Debug, Clone)]
pub struct Actor {
    pub name: String,
    pub role: Role,
    pub key_seed: String,
    pub data: Vec<DataInstance>,
    /// Policy name to parsed-checked source text.
    pub policies: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub chain: ChainParams,
    pub tick_seconds: u64,
    pub calibration: Calibration,
    pub conversion: Conversion,
    pub censor: CensorSpec,
    pub data_model: DataModel,
    pub actors: Vec<Actor>,
    pub timeline: Vec<StepSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} is not valid scenario JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("scenario is invalid:\n{}", problems.join("\n"))]
    Invalid { problems: Vec<String> },
}

impl Scenario {
    pub fn actor(&self, name: &str) -> Option<&Actor> {
        self.actors.iter().find(|a| a.name == name)
    }

    /// Actors matched by a member reference: a literal name, or `prefix-*`
    /// covering a whole expanded group.
    pub fn members(&self, reference: &str) -> Vec<&Actor> {
        match reference.strip_suffix("-*") {
            Some(prefix) => self
                .actors
                .iter()
                .filter(|a| {
                    a.name
                        .strip_prefix(prefix)
                        .and_then(|rest| rest.strip_prefix('-'))
                        .is_some_and(|idx| idx.chars().all(|c| c.is_ascii_digit()))
                })
                .collect(),
            None => self.actor(reference).into_iter().collect(),
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ScenarioFile =
        serde_json::from_str(&text).map_err(|source| ScenarioError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    resolve(file, dir)
}

fn resolve(file: ScenarioFile, dir: &Path) -> Result<Scenario, ScenarioError> {
    let mut problems = Vec::new();

    if let Err(err) = file.data_model.validate() {
        problems.push(format!("data model: {err}"));
    }

    let mut actors = Vec::new();
    let mut names = BTreeSet::new();
    for spec in &file.actors {
        if spec.key_seed.is_empty() {
            problems.push(format!("actor {}: empty key seed", spec.name));
        }
        let mut policies = BTreeMap::new();
        for (policy_name, rel) in &spec.policies {
            let policy_path = dir.join(rel);
            match fs::read_to_string(&policy_path) {
                Err(err) => problems.push(format!(
                    "actor {}: policy {policy_name}: cannot read {}: {err}",
                    spec.name,
                    policy_path.display()
                )),
                Ok(text) => match parse_policy(&text) {
                    Err(err) => problems.push(format!(
                        "actor {}: policy {policy_name} ({}): {err}",
                        spec.name,
                        policy_path.display()
                    )),
                    Ok(_) => {
                        policies.insert(policy_name.clone(), text);
                    }
                },
            }
        }
        let probe_nonce = Nonce32([0u8; 32]);
        for instance in &spec.data {
            if let Err(err) = commit_data(&file.data_model, instance, &probe_nonce) {
                problems.push(format!("actor {}: data: {err}", spec.name));
            }
        }
        let expansions: Vec<(String, String)> = match spec.count {
            None => vec![(spec.name.clone(), spec.key_seed.clone())],
            Some(0) => {
                problems.push(format!("actor {}: count 0 expands to nothing", spec.name));
                Vec::new()
            }
            Some(n) => (0..n)
                .map(|i| (format!("{}-{i}", spec.name), format!("{}-{i}", spec.key_seed)))
                .collect(),
        };
        for (name, key_seed) in expansions {
            if !names.insert(name.clone()) {
                problems.push(format!("duplicate actor name {name}"));
            }
            actors.push(Actor {
                name,
                role: spec.role,
                key_seed,
                data: spec.data.clone(),
                policies: policies.clone(),
            });
        }
    }

    let scenario = Scenario {
        name: file.name,
        description: file.description,
        chain: file.chain,
        tick_seconds: file.tick_seconds,
        calibration: file.calibration,
        conversion: file.conversion,
        censor: file.censor,
        data_model: file.data_model,
        actors,
        timeline: file.timeline,
    };
    validate_timeline(&scenario, &mut problems);

    if problems.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid { problems })
    }
}

/// Contract facts the validator tracks per label.
struct DeclaredContract {
    kind: ContractKind,
    subject: Option<String>,
    policy_items: usize,
}

fn validate_timeline(sc: &Scenario, problems: &mut Vec<String>) {
    let mut last_tick = 0u64;
    let mut contracts: BTreeMap<String, DeclaredContract> = BTreeMap::new();

    let parsed = |sc: &Scenario, controller: &str, policy: &str| -> Option<Policy> {
        let actor = sc.actor(controller)?;
        let text = actor.policies.get(policy)?;
        parse_policy(text).ok()
    };

    for (index, step) in sc.timeline.iter().enumerate() {
        let at = format!("step {index} ({} @ tick {})", step.name(), step.tick());
        if step.tick() < last_tick {
            problems.push(format!("{at}: tick regresses from {last_tick}"));
        }
        last_tick = last_tick.max(step.tick());

        match step {
            StepSpec::Deploy {
                contract,
                kind,
                subject,
                controller,
                policy,
                grant,
                ..
            } => {
                let controller_ok =
                    check_role(sc, controller, &[Role::Controller, Role::Processor], &at, problems);
                if controller_ok {
                    let actor = sc.actor(controller).expect("role checked");
                    if !actor.policies.contains_key(policy) {
                        problems.push(format!(
                            "{at}: actor {controller} declares no policy named {policy}"
                        ));
                    }
                }
                match kind {
                    ContractKind::Subject => match subject {
                        None => problems
                            .push(format!("{at}: subject contracts need a subject actor")),
                        Some(name) => {
                            if check_role(sc, name, &[Role::Subject], &at, problems) {
                                let actor = sc.actor(name).expect("role checked");
                                for path in grant {
                                    if !actor.data.iter().any(|d| &d.path == path) {
                                        problems.push(format!(
                                            "{at}: {name} holds no data instance at {path}"
                                        ));
                                    }
                                }
                            }
                        }
                    },
                    ContractKind::Controller => {
                        if subject.is_some() {
                            problems.push(format!(
                                "{at}: controller contracts take no subject actor"
                            ));
                        }
                        if !grant.is_empty() {
                            problems.push(format!(
                                "{at}: controller contracts take no data grant"
                            ));
                        }
                    }
                }
                let policy_items = parsed(sc, controller, policy)
                    .map(|p| p.items.len())
                    .unwrap_or(0);
                if contracts
                    .insert(
                        contract.clone(),
                        DeclaredContract {
                            kind: *kind,
                            subject: subject.clone(),
                            policy_items,
                        },
                    )
                    .is_some()
                {
                    problems.push(format!("{at}: duplicate contract label {contract}"));
                }
            }
            StepSpec::GrantData {
                contract,
                paths,
                child,
                ..
            } => {
                let parent = match contracts.get(contract) {
                    None => {
                        problems.push(format!("{at}: unknown contract {contract}"));
                        None
                    }
                    Some(c) if c.kind != ContractKind::Subject => {
                        problems.push(format!(
                            "{at}: {contract} is not a subject contract"
                        ));
                        None
                    }
                    Some(c) => Some(c),
                };
                if let Some(parent) = parent {
                    let subject = parent.subject.clone().expect("subject contracts have one");
                    let policy_items = parent.policy_items;
                    if let Some(actor) = sc.actor(&subject) {
                        for path in paths {
                            if !actor.data.iter().any(|d| &d.path == path) {
                                problems.push(format!(
                                    "{at}: {subject} holds no data instance at {path}"
                                ));
                            }
                        }
                    }
                    if contracts
                        .insert(
                            child.clone(),
                            DeclaredContract {
                                kind: ContractKind::Subject,
                                subject: Some(subject),
                                policy_items,
                            },
                        )
                        .is_some()
                    {
                        problems.push(format!("{at}: duplicate contract label {child}"));
                    }
                }
            }
            StepSpec::UsageEvent { contract, .. }
            | StepSpec::TimeStep { contract, .. }
            | StepSpec::Withdraw { contract, .. } => {
                expect_kind(&contracts, contract, ContractKind::Subject, &at, problems);
            }
            StepSpec::Transfer {
                contract, processor, ..
            } => {
                expect_kind(&contracts, contract, ContractKind::Subject, &at, problems);
                check_role(sc, processor, &[Role::Processor, Role::Controller], &at, problems);
            }
            StepSpec::Join {
                contract, member, ..
            }
            | StepSpec::Leave {
                contract, member, ..
            } => {
                expect_kind(&contracts, contract, ContractKind::Controller, &at, problems);
                if sc.members(member).is_empty() {
                    problems.push(format!("{at}: member reference {member} matches no actor"));
                }
            }
            StepSpec::BulkEvent {
                contract, template, ..
            } => {
                if let Some(declared) =
                    expect_kind(&contracts, contract, ContractKind::Controller, &at, problems)
                {
                    if *template >= declared.policy_items as u64 {
                        problems.push(format!(
                            "{at}: template {template} out of range ({} declared)",
                            declared.policy_items
                        ));
                    }
                }
            }
            StepSpec::Tamper { .. } => {}
        }
    }
}

fn check_role(
    sc: &Scenario,
    name: &str,
    wanted: &[Role],
    at: &str,
    problems: &mut Vec<String>,
) -> bool {
    match sc.actor(name) {
        None => {
            problems.push(format!("{at}: unknown actor {name}"));
            false
        }
        Some(actor) if !wanted.contains(&actor.role) => {
            problems.push(format!(
                "{at}: actor {name} has role {}, expected {}",
                actor.role,
                wanted
                    .iter()
                    .map(Role::to_string)
                    .collect::<Vec<_>>()
                    .join(" or ")
            ));
            false
        }
        Some(_) => true,
    }
}

fn expect_kind<'a>(
    contracts: &'a BTreeMap<String, DeclaredContract>,
    label: &str,
    kind: ContractKind,
    at: &str,
    problems: &mut Vec<String>,
) -> Option<&'a DeclaredContract> {
    match contracts.get(label) {
        None => {
            problems.push(format!("{at}: unknown contract {label}"));
            None
        }
        Some(c) if c.kind != kind => {
            problems.push(format!(
                "{at}: contract {label} is a {} contract",
                match c.kind {
                    ContractKind::Subject => "subject",
                    ContractKind::Controller => "controller",
                }
            ));
            None
        }
        Some(c) => Some(c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    const POLICY: &str = r#"
mechanism allowPing {
  on tentative ping()
  then allow
}
"#;

    fn minimal(timeline: &str) -> String {
        format!(
            r#"{{
  "name": "t",
  "dataModel": {{
    "primitives": {{ "text": "text" }},
    "composites": {{ "user": [ {{ "name": "email", "type": "text" }} ] }}
  }},
  "actors": [
    {{ "name": "alice", "role": "subject", "keySeed": "a",
       "data": [ {{ "path": "user.email", "value": "a@x" }} ] }},
    {{ "name": "acme", "role": "controller", "keySeed": "c",
       "policies": {{ "p": "p.policy" }} }}
  ],
  "timeline": {timeline}
}}"#
        )
    }

    #[test]
    fn loads_and_expands() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "p.policy", POLICY);
        let path = write_file(
            dir.path(),
            "s.json",
            &minimal(
                r#"[
      { "step": "deploy", "tick": 0, "contract": "c1", "kind": "subject",
        "subject": "alice", "controller": "acme", "policy": "p",
        "grant": ["user.email"] },
      { "step": "usageEvent", "tick": 1, "contract": "c1", "activity": "ping" }
    ]"#,
            ),
        );
        let sc = load_scenario(&path).unwrap();
        assert_eq!(sc.actors.len(), 2);
        assert_eq!(sc.timeline.len(), 2);
        assert_eq!(sc.actor("acme").unwrap().policies.len(), 1);
    }

    #[test]
    fn reports_all_problems_at_once() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "p.policy", POLICY);
        let path = write_file(
            dir.path(),
            "s.json",
            &minimal(
                r#"[
      { "step": "deploy", "tick": 5, "contract": "c1", "kind": "subject",
        "subject": "nobody", "controller": "acme", "policy": "missing" },
      { "step": "usageEvent", "tick": 1, "contract": "ghost", "activity": "ping" }
    ]"#,
            ),
        );
        let err = load_scenario(&path).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("unknown actor nobody"), "{text}");
        assert!(text.contains("no policy named missing"), "{text}");
        assert!(text.contains("tick regresses"), "{text}");
        assert!(text.contains("unknown contract ghost"), "{text}");
    }

    #[test]
    fn missing_policy_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "s.json", &minimal("[]"));
        let err = load_scenario(&path).unwrap_err();
        assert!(err.to_string().contains("p.policy"), "{err}");
    }

    #[test]
    fn group_expansion_and_member_wildcards() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "p.policy", POLICY);
        let text = r#"{
  "name": "g",
  "actors": [
    { "name": "member", "role": "subject", "keySeed": "m", "count": 3 },
    { "name": "acme", "role": "controller", "keySeed": "c",
      "policies": { "p": "p.policy" } }
  ],
  "timeline": [
    { "step": "deploy", "tick": 0, "contract": "club", "kind": "controller",
      "controller": "acme", "policy": "p" },
    { "step": "join", "tick": 1, "contract": "club", "member": "member-*" }
  ]
}"#;
        let path = write_file(dir.path(), "s.json", text);
        let sc = load_scenario(&path).unwrap();
        assert_eq!(sc.actors.len(), 4);
        assert_eq!(sc.members("member-*").len(), 3);
        assert_eq!(sc.members("member-1").len(), 1);
        assert_ne!(
            sc.actor("member-0").unwrap().key_seed,
            sc.actor("member-1").unwrap().key_seed
        );
    }

    #[test]
    fn bulk_template_range_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "p.policy", POLICY);
        let text = r#"{
  "name": "b",
  "actors": [
    { "name": "acme", "role": "controller", "keySeed": "c",
      "policies": { "p": "p.policy" } }
  ],
  "timeline": [
    { "step": "deploy", "tick": 0, "contract": "club", "kind": "controller",
      "controller": "acme", "policy": "p" },
    { "step": "bulkEvent", "tick": 1, "contract": "club", "template": 7,
      "activity": "ping" }
  ]
}"#;
        let path = write_file(dir.path(), "s.json", text);
        let err = load_scenario(&path).unwrap_err();
        assert!(err.to_string().contains("template 7 out of range"), "{err}");
    }
}
