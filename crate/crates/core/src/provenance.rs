//! Off-chain data modeling and the salted commitments that stand in for
//! plaintext on chain.
//!
//! The subject keeps plaintext and nonces in a local [`ProvenanceGraph`];
//! contracts only ever see [`DataReference`] digest pairs. Releasing the
//! nonce to an auditor makes every reference recomputable.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canon::{CanonDecode, CanonEncode, CanonError, Decoder, Encoder};
use crate::crypto::{sha3_domain, Address, Hash32, Nonce32};

const INST_DOMAIN: &str = "ref.inst.v1";
const VALUE_DOMAIN: &str = "ref.value.v1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProvenanceError {
    #[error("duplicate type name {0:?}")]
    DuplicateType(String),
    #[error("unknown type {0:?}")]
    UnknownType(String),
    #[error("composite {0:?} participates in a cycle")]
    Cycle(String),
    #[error("path {0:?} does not resolve in the data model")]
    UnknownPath(String),
    #[error("value {value:?} is not canonical for {kind} at {path:?}: {reason}")]
    BadValue {
        path: String,
        kind: &'static str,
        value: String,
        reason: String,
    },
    #[error("processor {0} needs a controller parent already in the graph")]
    ProcessorWithoutParent(Address),
    #[error("parent {0} is not a controller entry")]
    ParentNotController(Address),
    #[error("recipient {0} already recorded with different role or contract")]
    EntryConflict(Address),
    #[error("stored reference for {path:?} under recipient {recipient} does not recompute")]
    BadCommitment { recipient: Address, path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TypeKind {
    Text,
    Date,
    Number,
}

impl TypeKind {
    fn name(self) -> &'static str {
        match self {
            TypeKind::Text => "text",
            TypeKind::Date => "date",
            TypeKind::Number => "number",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeField {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

/// Named primitive and composite data types. Composites reference other
/// types by name; [`DataModel::validate`] guarantees the references resolve
/// and contain no cycle.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DataModel {
    pub primitives: BTreeMap<String, TypeKind>,
    pub composites: BTreeMap<String, Vec<CompositeField>>,
}

impl DataModel {
    pub fn validate(&self) -> Result<(), ProvenanceError> {
        for name in self.composites.keys() {
            if self.primitives.contains_key(name) {
                return Err(ProvenanceError::DuplicateType(name.clone()));
            }
        }
        for fields in self.composites.values() {
            let mut seen = BTreeSet::new();
            for field in fields {
                if !seen.insert(&field.name) {
                    return Err(ProvenanceError::DuplicateType(field.name.clone()));
                }
                if !self.primitives.contains_key(&field.type_name)
                    && !self.composites.contains_key(&field.type_name)
                {
                    return Err(ProvenanceError::UnknownType(field.type_name.clone()));
                }
            }
        }
        for name in self.composites.keys() {
            let mut path = Vec::new();
            self.check_cycle(name, &mut path)?;
        }
        Ok(())
    }

    fn check_cycle<'a>(
        &'a self,
        name: &'a str,
        stack: &mut Vec<&'a str>,
    ) -> Result<(), ProvenanceError> {
        if stack.contains(&name) {
            return Err(ProvenanceError::Cycle(name.to_string()));
        }
        let Some(fields) = self.composites.get(name) else {
            return Ok(());
        };
        stack.push(name);
        for field in fields {
            self.check_cycle(&field.type_name, stack)?;
        }
        stack.pop();
        Ok(())
    }

    /// Walk a dotted path (`identity.fullname`) from a root type down to a
    /// primitive.
    pub fn resolve(&self, path: &str) -> Result<TypeKind, ProvenanceError> {
        let unknown = || ProvenanceError::UnknownPath(path.to_string());
        let mut segments = path.split('.');
        let root = segments.next().filter(|s| !s.is_empty()).ok_or_else(unknown)?;
        let mut current = root.to_string();
        for segment in segments {
            let fields = self.composites.get(&current).ok_or_else(unknown)?;
            let field = fields
                .iter()
                .find(|f| f.name == segment)
                .ok_or_else(unknown)?;
            current = field.type_name.clone();
        }
        self.primitives.get(&current).copied().ok_or_else(unknown)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DataInstance {
    pub path: String,
    pub value: String,
}

impl DataInstance {
    pub fn new(path: impl Into<String>, value: impl Into<String>) -> Self {
        DataInstance {
            path: path.into(),
            value: value.into(),
        }
    }
}

/// The on-chain stand-in for one data instance: two salted digests, no
/// plaintext.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DataReference {
    pub instantiation: Hash32,
    pub value: Hash32,
}

impl CanonEncode for DataReference {
    fn encode(&self, enc: &mut Encoder) {
        self.instantiation.encode(enc);
        self.value.encode(enc);
    }
}

impl CanonDecode for DataReference {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(DataReference {
            instantiation: Hash32::decode(dec)?,
            value: Hash32::decode(dec)?,
        })
    }
}

pub fn instantiation_digest(path: &str, nonce: &Nonce32) -> Hash32 {
    sha3_domain(INST_DOMAIN, |enc| {
        enc.put_str(path);
        enc.put_raw(nonce.as_bytes());
    })
}

pub fn value_digest(path: &str, value: &str, nonce: &Nonce32) -> Hash32 {
    sha3_domain(VALUE_DOMAIN, |enc| {
        enc.put_str(path);
        enc.put_str(value);
        enc.put_raw(nonce.as_bytes());
    })
}

/// Commit one instance under the model: validates the path, checks the value
/// is canonical for the resolved primitive, and derives both digests.
pub fn commit_data(
    model: &DataModel,
    instance: &DataInstance,
    nonce: &Nonce32,
) -> Result<DataReference, ProvenanceError> {
    let kind = model.resolve(&instance.path)?;
    check_canonical(kind, instance)?;
    Ok(DataReference {
        instantiation: instantiation_digest(&instance.path, nonce),
        value: value_digest(&instance.path, &instance.value, nonce),
    })
}

pub fn verify_commitment(
    instance: &DataInstance,
    nonce: &Nonce32,
    reference: &DataReference,
) -> bool {
    reference.instantiation == instantiation_digest(&instance.path, nonce)
        && reference.value == value_digest(&instance.path, &instance.value, nonce)
}

fn check_canonical(kind: TypeKind, instance: &DataInstance) -> Result<(), ProvenanceError> {
    let fail = |reason: &str| ProvenanceError::BadValue {
        path: instance.path.clone(),
        kind: kind.name(),
        value: instance.value.clone(),
        reason: reason.to_string(),
    };
    match kind {
        TypeKind::Text => Ok(()),
        TypeKind::Date => check_iso_date(&instance.value).map_err(|r| fail(r)),
        TypeKind::Number => check_shortest_decimal(&instance.value).map_err(|r| fail(r)),
    }
}

/// Strict `YYYY-MM-DD`.
fn check_iso_date(s: &str) -> Result<(), &'static str> {
    let bytes = s.as_bytes();
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return Err("expected YYYY-MM-DD");
    }
    let digits = |range: std::ops::Range<usize>| -> Result<u32, &'static str> {
        s[range]
            .parse::<u32>()
            .map_err(|_| "expected decimal digits")
    };
    if !bytes[0..4].iter().all(u8::is_ascii_digit) {
        return Err("expected decimal digits");
    }
    let year = digits(0..4)?;
    let month = digits(5..7)?;
    let day = digits(8..10)?;
    if !(1..=12).contains(&month) {
        return Err("month out of range");
    }
    let leap = year % 4 == 0 && (year % 100 != 0 || year % 400 == 0);
    let max_day = match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ => {
            if leap {
                29
            } else {
                28
            }
        }
    };
    if day == 0 || day > max_day {
        return Err("day out of range");
    }
    Ok(())
}

/// Shortest decimal form: no leading zeros, no trailing fraction zeros, no
/// bare or negative zero variants, no exponents.
fn check_shortest_decimal(s: &str) -> Result<(), &'static str> {
    let body = s.strip_prefix('-').unwrap_or(s);
    if s == "-0" || body.is_empty() {
        return Err("not a decimal number");
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err("malformed integer part");
    }
    if int_part.len() > 1 && int_part.starts_with('0') {
        return Err("leading zeros");
    }
    if let Some(frac) = frac_part {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err("malformed fraction");
        }
        if frac.ends_with('0') {
            return Err("trailing fraction zeros");
        }
    }
    if s.starts_with('-') && int_part == "0" && frac_part.is_none() {
        return Err("negative zero");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RecipientRole {
    Controller,
    Processor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GrantRecord {
    pub reference: DataReference,
    pub instance: DataInstance,
    pub tx_hash: Hash32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecipientEntry {
    pub recipient: Address,
    pub role: RecipientRole,
    pub contract: Address,
    pub nonce: Nonce32,
    pub grants: Vec<GrantRecord>,
    /// Controller this processor received the data through.
    pub parent: Option<Address>,
}

/// One hop of an audit trail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrailHop {
    pub recipient: Address,
    pub role: RecipientRole,
    pub via: Option<Address>,
}

/// Subject-side ledger of who holds what. Entries keep insertion (grant)
/// order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProvenanceGraph {
    entries: Vec<RecipientEntry>,
}

impl ProvenanceGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[RecipientEntry] {
        &self.entries
    }

    pub fn entry(&self, recipient: &Address) -> Option<&RecipientEntry> {
        self.entries.iter().find(|e| e.recipient == *recipient)
    }

    /// Record granted references for a recipient. Repeat grants of the same
    /// reference are idempotent.
    pub fn record_transfer(
        &mut self,
        recipient: Address,
        role: RecipientRole,
        contract: Address,
        nonce: Nonce32,
        grants: Vec<GrantRecord>,
        parent: Option<Address>,
    ) -> Result<(), ProvenanceError> {
        if role == RecipientRole::Processor {
            let parent_addr = parent.ok_or(ProvenanceError::ProcessorWithoutParent(recipient))?;
            match self.entry(&parent_addr) {
                None => return Err(ProvenanceError::ProcessorWithoutParent(recipient)),
                Some(entry) if entry.role != RecipientRole::Controller => {
                    return Err(ProvenanceError::ParentNotController(parent_addr))
                }
                Some(_) => {}
            }
        }
        match self.entries.iter_mut().find(|e| e.recipient == recipient) {
            Some(entry) => {
                if entry.role != role || entry.contract != contract || entry.parent != parent {
                    return Err(ProvenanceError::EntryConflict(recipient));
                }
                for grant in grants {
                    if !entry.grants.iter().any(|g| g.reference == grant.reference) {
                        entry.grants.push(grant);
                    }
                }
            }
            None => self.entries.push(RecipientEntry {
                recipient,
                role,
                contract,
                nonce,
                grants,
                parent,
            }),
        }
        Ok(())
    }

    /// Everyone holding a reference for `path`, in grant order, with the
    /// forwarding controller noted for processors.
    pub fn audit_trail(&self, path: &str) -> Vec<TrailHop> {
        self.entries
            .iter()
            .filter(|e| e.grants.iter().any(|g| g.instance.path == path))
            .map(|e| TrailHop {
                recipient: e.recipient,
                role: e.role,
                via: e.parent,
            })
            .collect()
    }

    /// Recompute every stored reference from its plaintext and nonce.
    pub fn verify(&self) -> Result<(), ProvenanceError> {
        for entry in &self.entries {
            for grant in &entry.grants {
                if !verify_commitment(&grant.instance, &entry.nonce, &grant.reference) {
                    return Err(ProvenanceError::BadCommitment {
                        recipient: entry.recipient,
                        path: grant.instance.path.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::sha3;

    fn model() -> DataModel {
        let mut m = DataModel::default();
        m.primitives.insert("fullname".into(), TypeKind::Text);
        m.primitives.insert("birthdate".into(), TypeKind::Date);
        m.primitives.insert("email".into(), TypeKind::Text);
        m.primitives.insert("amount".into(), TypeKind::Number);
        m.composites.insert(
            "identity".into(),
            vec![
                CompositeField {
                    name: "fullname".into(),
                    type_name: "fullname".into(),
                },
                CompositeField {
                    name: "birthdate".into(),
                    type_name: "birthdate".into(),
                },
            ],
        );
        m.composites.insert(
            "account".into(),
            vec![
                CompositeField {
                    name: "owner".into(),
                    type_name: "identity".into(),
                },
                CompositeField {
                    name: "email".into(),
                    type_name: "email".into(),
                },
            ],
        );
        m.validate().unwrap();
        m
    }

    fn nonce(byte: u8) -> Nonce32 {
        Nonce32::from_slice(&[byte; 32]).unwrap()
    }

    #[test]
    fn paths_resolve_through_nested_composites() {
        let m = model();
        assert_eq!(m.resolve("identity.fullname").unwrap(), TypeKind::Text);
        assert_eq!(m.resolve("account.owner.birthdate").unwrap(), TypeKind::Date);
        assert_eq!(m.resolve("email").unwrap(), TypeKind::Text);
        assert!(matches!(
            m.resolve("account.owner.nickname"),
            Err(ProvenanceError::UnknownPath(_))
        ));
        assert!(matches!(
            m.resolve("identity"),
            Err(ProvenanceError::UnknownPath(_)),
        ));
    }

    #[test]
    fn cyclic_models_are_rejected() {
        let mut m = DataModel::default();
        m.composites.insert(
            "a".into(),
            vec![CompositeField {
                name: "b".into(),
                type_name: "b".into(),
            }],
        );
        m.composites.insert(
            "b".into(),
            vec![CompositeField {
                name: "a".into(),
                type_name: "a".into(),
            }],
        );
        assert!(matches!(m.validate(), Err(ProvenanceError::Cycle(_))));
    }

    #[test]
    fn date_values_must_be_real_iso_dates() {
        let m = model();
        let ok = |v: &str| {
            commit_data(&m, &DataInstance::new("birthdate", v), &nonce(1)).map(|_| ())
        };
        ok("2024-02-29").unwrap();
        ok("1999-12-31").unwrap();
        assert!(ok("2026-02-29").is_err());
        assert!(ok("2026-13-01").is_err());
        assert!(ok("2026-00-10").is_err());
        assert!(ok("26-01-01").is_err());
        assert!(ok("2026-1-01").is_err());
    }

    #[test]
    fn numbers_must_be_shortest_decimal() {
        let m = model();
        let ok = |v: &str| commit_data(&m, &DataInstance::new("amount", v), &nonce(1)).map(|_| ());
        for good in ["0", "7", "-1.5", "10.25", "123456789"] {
            ok(good).unwrap_or_else(|e| panic!("{good}: {e}"));
        }
        for bad in ["01", "1.50", "-0", ".5", "1.", "1e3", "+1", ""] {
            assert!(ok(bad).is_err(), "{bad} accepted");
        }
    }

    #[test]
    fn commitments_are_deterministic_and_nonce_sensitive() {
        let m = model();
        let inst = DataInstance::new("email", "a@b.c");
        let r1 = commit_data(&m, &inst, &nonce(1)).unwrap();
        let r2 = commit_data(&m, &inst, &nonce(1)).unwrap();
        let r3 = commit_data(&m, &inst, &nonce(2)).unwrap();
        assert_eq!(r1, r2);
        assert_ne!(r1, r3);
        assert!(verify_commitment(&inst, &nonce(1), &r1));
        assert!(!verify_commitment(&inst, &nonce(2), &r1));
        assert!(!verify_commitment(
            &DataInstance::new("email", "a@b.d"),
            &nonce(1),
            &r1
        ));
    }

    #[test]
    fn digests_match_a_direct_reconstruction() {
        let n = nonce(9);
        let reference = commit_data(&model(), &DataInstance::new("email", "x@y.z"), &n).unwrap();
        let mut enc = Encoder::with_domain(INST_DOMAIN);
        enc.put_str("email");
        enc.put_raw(n.as_bytes());
        assert_eq!(reference.instantiation, sha3(&enc.finish()));
        let mut enc = Encoder::with_domain(VALUE_DOMAIN);
        enc.put_str("email");
        enc.put_str("x@y.z");
        enc.put_raw(n.as_bytes());
        assert_eq!(reference.value, sha3(&enc.finish()));
    }

    #[test]
    fn same_value_commitments_stay_distinct_under_fresh_nonces() {
        use rand_core::{RngCore, SeedableRng};
        let m = model();
        let inst = DataInstance::new("email", "hide@me.example");
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let mut seen = BTreeSet::new();
        for _ in 0..1_000 {
            let mut bytes = [0u8; 32];
            rng.fill_bytes(&mut bytes);
            let r = commit_data(&m, &inst, &Nonce32::from_slice(&bytes).unwrap()).unwrap();
            assert!(seen.insert((r.instantiation, r.value)), "collision");
            assert_ne!(r.value, sha3(inst.value.as_bytes()), "unsalted leak");
        }
    }

    fn sample_graph() -> (ProvenanceGraph, Address, Address) {
        let m = model();
        let controller = Address([0xc1; 20]);
        let processor = Address([0xb1; 20]);
        let inst = DataInstance::new("email", "subject@mail.example");
        let n = nonce(3);
        let reference = commit_data(&m, &inst, &n).unwrap();
        let mut graph = ProvenanceGraph::new();
        graph
            .record_transfer(
                controller,
                RecipientRole::Controller,
                Address([0xaa; 20]),
                n,
                vec![GrantRecord {
                    reference,
                    instance: inst.clone(),
                    tx_hash: Hash32([1u8; 32]),
                }],
                None,
            )
            .unwrap();
        graph
            .record_transfer(
                processor,
                RecipientRole::Processor,
                Address([0xbb; 20]),
                n,
                vec![GrantRecord {
                    reference,
                    instance: inst,
                    tx_hash: Hash32([2u8; 32]),
                }],
                Some(controller),
            )
            .unwrap();
        (graph, controller, processor)
    }

    #[test]
    fn audit_trail_lists_recipients_in_grant_order_with_forwarding() {
        let (graph, controller, processor) = sample_graph();
        let trail = graph.audit_trail("email");
        assert_eq!(trail.len(), 2);
        assert_eq!(trail[0].recipient, controller);
        assert_eq!(trail[0].via, None);
        assert_eq!(trail[1].recipient, processor);
        assert_eq!(trail[1].via, Some(controller));
        assert!(graph.audit_trail("identity.fullname").is_empty());
        graph.verify().unwrap();
    }

    #[test]
    fn processors_need_a_recorded_controller_parent() {
        let mut graph = ProvenanceGraph::new();
        let err = graph.record_transfer(
            Address([1; 20]),
            RecipientRole::Processor,
            Address([2; 20]),
            nonce(1),
            vec![],
            Some(Address([9; 20])),
        );
        assert!(matches!(err, Err(ProvenanceError::ProcessorWithoutParent(_))));
    }

    #[test]
    fn duplicate_grants_are_idempotent() {
        let (mut graph, controller, _) = sample_graph();
        let before = graph.entry(&controller).unwrap().grants.len();
        let grant = graph.entry(&controller).unwrap().grants[0].clone();
        let n = graph.entry(&controller).unwrap().nonce;
        let contract = graph.entry(&controller).unwrap().contract;
        graph
            .record_transfer(
                controller,
                RecipientRole::Controller,
                contract,
                n,
                vec![grant],
                None,
            )
            .unwrap();
        assert_eq!(graph.entry(&controller).unwrap().grants.len(), before);
    }

    #[test]
    fn graph_round_trips_through_json_bit_exactly() {
        let (graph, ..) = sample_graph();
        let json = serde_json::to_string_pretty(&graph).unwrap();
        let back: ProvenanceGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, graph);
        assert_eq!(
            format!("{:?}", back.audit_trail("email")),
            format!("{:?}", graph.audit_trail("email"))
        );
        back.verify().unwrap();
    }
}
