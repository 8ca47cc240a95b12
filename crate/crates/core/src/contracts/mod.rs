//! Deployable contract blueprints.
//!
//! Two blueprints carry the accountability models: the per-pair usage
//! contract ([`SubjectInit`], one subject and one controller bound to an
//! obfuscated policy machine) and the membership contract
//! ([`ControllerInit`], one controller, many subjects, plaintext policy
//! templates and a members map). A small [`BlueprintLogic::Probe`] blueprint
//! exists for ledger plumbing tests.
//!
//! Blueprints travel inside deployment transactions, so a chain file is
//! self-contained and replayable. Dispatch is by function selector; every
//! entry point charges gas through the caller's [`CallCtx`].

mod controller;
mod subject;

pub use controller::ControllerInit;
pub use subject::{subject_layout, SubjectInit, CHILD_REGION, REF_REGION};

use serde::{Deserialize, Serialize};

use crate::canon::{CanonDecode, CanonEncode, CanonError, Decoder, Encoder};
use crate::crypto::{sha3_domain, Address, Hash32};
use crate::ledger::{revert, AbiValue, CallCtx, LogEvent, VmError};
use crate::policy::ActionKind;

/// Flat dispatch overhead per external call, in compute steps.
const DISPATCH_STEPS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StorageMode {
    StateVariables,
    EventLogs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum JoinMode {
    AutoJoin,
    ExplicitRejoin,
}

impl CanonEncode for StorageMode {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u8(match self {
            StorageMode::StateVariables => 0,
            StorageMode::EventLogs => 1,
        });
    }
}

impl CanonDecode for StorageMode {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        match dec.u8()? {
            0 => Ok(StorageMode::StateVariables),
            1 => Ok(StorageMode::EventLogs),
            tag => Err(CanonError::BadTag { what: "storage mode", tag }),
        }
    }
}

impl CanonEncode for JoinMode {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u8(match self {
            JoinMode::AutoJoin => 0,
            JoinMode::ExplicitRejoin => 1,
        });
    }
}

impl CanonDecode for JoinMode {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        match dec.u8()? {
            0 => Ok(JoinMode::AutoJoin),
            1 => Ok(JoinMode::ExplicitRejoin),
            tag => Err(CanonError::BadTag { what: "join mode", tag }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Blueprint {
    /// Calibration stand-in for compiled code size; deployment pays the
    /// per-byte deposit on it.
    pub code_size: u32,
    pub logic: BlueprintLogic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum BlueprintLogic {
    Subject(Box<SubjectInit>),
    Controller(ControllerInit),
    Probe,
}

impl CanonEncode for Blueprint {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u32(self.code_size);
        match &self.logic {
            BlueprintLogic::Subject(init) => {
                enc.put_u8(0);
                init.encode(enc);
            }
            BlueprintLogic::Controller(init) => {
                enc.put_u8(1);
                init.encode(enc);
            }
            BlueprintLogic::Probe => enc.put_u8(2),
        }
    }
}

impl CanonDecode for Blueprint {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        let code_size = dec.u32()?;
        let logic = match dec.u8()? {
            0 => BlueprintLogic::Subject(Box::new(SubjectInit::decode(dec)?)),
            1 => BlueprintLogic::Controller(ControllerInit::decode(dec)?),
            2 => BlueprintLogic::Probe,
            tag => {
                return Err(CanonError::BadTag {
                    what: "blueprint logic",
                    tag,
                })
            }
        };
        Ok(Blueprint { code_size, logic })
    }
}

pub fn run_constructor(blueprint: &Blueprint, ctx: &mut CallCtx<'_>) -> Result<(), VmError> {
    ctx.compute(DISPATCH_STEPS)?;
    match &blueprint.logic {
        BlueprintLogic::Subject(init) => subject::construct(init, ctx),
        BlueprintLogic::Controller(init) => controller::construct(init, ctx),
        BlueprintLogic::Probe => Ok(()),
    }
}

pub fn dispatch(
    blueprint: &Blueprint,
    ctx: &mut CallCtx<'_>,
    selector: [u8; 4],
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    ctx.compute(DISPATCH_STEPS)?;
    match &blueprint.logic {
        BlueprintLogic::Subject(init) => subject::call(init, ctx, selector, args),
        BlueprintLogic::Controller(init) => controller::call(init, ctx, selector, args),
        BlueprintLogic::Probe => probe_call(ctx, selector, args),
    }
}

/// Log topic for a record type name.
pub fn topic(record_type: &str) -> Hash32 {
    sha3_domain("topic.v1", |enc| enc.put_str(record_type))
}

pub fn usage_event_topic() -> Hash32 {
    topic("UsageEventRecord")
}

pub fn transfer_event_topic() -> Hash32 {
    topic("TransferEvent")
}

pub fn violation_event_topic() -> Hash32 {
    topic("ViolationEvent")
}

pub fn child_linked_topic() -> Hash32 {
    topic("ChildLinked")
}

pub fn joined_topic() -> Hash32 {
    topic("Joined")
}

pub fn left_topic() -> Hash32 {
    topic("Left")
}

pub fn data_ref_topic() -> Hash32 {
    topic("DataRef")
}

/// An address as a 32-byte topic (left-padded).
pub fn address_topic(addr: &Address) -> Hash32 {
    let mut out = [0u8; 32];
    out[12..].copy_from_slice(&addr.0);
    Hash32(out)
}

pub fn address_from_topic(topic: &Hash32) -> Address {
    let mut out = [0u8; 20];
    out.copy_from_slice(&topic.0[12..]);
    Address(out)
}

/// Decoded body of one decision log under the `UsageEventRecord` topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageRecord {
    pub activity: Hash32,
    pub attrs: Vec<(Hash32, Hash32)>,
    pub decision: ActionKind,
    pub delay_ticks: u64,
    pub substitutions: Vec<(Hash32, Hash32)>,
    pub tick: u64,
}

/// Decoded body of one bulk-execution log under the same topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BulkRecord {
    pub activity: Hash32,
    pub template_index: u64,
    pub params: Vec<(Hash32, Hash32)>,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UsageLogBody {
    Single(UsageRecord),
    Bulk(BulkRecord),
}

const USAGE_VERSION_SINGLE: u8 = 0;
const USAGE_VERSION_BULK: u8 = 1;

fn put_pairs(enc: &mut Encoder, pairs: &[(Hash32, Hash32)]) {
    enc.put_u32(pairs.len() as u32);
    for (a, b) in pairs {
        a.encode(enc);
        b.encode(enc);
    }
}

fn take_pairs(dec: &mut Decoder<'_>) -> Result<Vec<(Hash32, Hash32)>, CanonError> {
    let n = dec.u32()?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        out.push((Hash32::decode(dec)?, Hash32::decode(dec)?));
    }
    Ok(out)
}

/// Digest-pair list in call-argument form, as passed to `notifyEvent` and
/// friends for event attributes.
pub fn encode_pairs(pairs: &[(Hash32, Hash32)]) -> Vec<u8> {
    let mut enc = Encoder::new();
    put_pairs(&mut enc, pairs);
    enc.finish()
}

pub fn decode_pairs(data: &[u8]) -> Option<Vec<(Hash32, Hash32)>> {
    let mut dec = Decoder::new(data);
    let pairs = take_pairs(&mut dec).ok()?;
    dec.finish().ok()?;
    Some(pairs)
}

impl UsageRecord {
    pub fn encode_data(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.put_u8(USAGE_VERSION_SINGLE);
        enc.put_u64(self.tick);
        enc.put_u8(crate::compiler::decision_kind_byte(self.decision));
        enc.put_u64(self.delay_ticks);
        put_pairs(&mut enc, &self.attrs);
        put_pairs(&mut enc, &self.substitutions);
        enc.finish()
    }
}

impl BulkRecord {
    pub fn encode_data(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.put_u8(USAGE_VERSION_BULK);
        enc.put_u64(self.tick);
        enc.put_u64(self.template_index);
        put_pairs(&mut enc, &self.params);
        enc.finish()
    }
}

/// Parse a log emitted under [`usage_event_topic`]; `None` when the log has
/// a different topic or malformed data.
pub fn parse_usage_log(log: &LogEvent) -> Option<UsageLogBody> {
    if log.topics.first() != Some(&usage_event_topic()) {
        return None;
    }
    let activity = *log.topics.get(1)?;
    let mut dec = Decoder::new(&log.data);
    let version = dec.u8().ok()?;
    let body = match version {
        USAGE_VERSION_SINGLE => {
            let tick = dec.u64().ok()?;
            let decision = crate::compiler::decision_kind_from_byte(dec.u8().ok()?)?;
            let delay_ticks = dec.u64().ok()?;
            let attrs = take_pairs(&mut dec).ok()?;
            let substitutions = take_pairs(&mut dec).ok()?;
            UsageLogBody::Single(UsageRecord {
                activity,
                attrs,
                decision,
                delay_ticks,
                substitutions,
                tick,
            })
        }
        USAGE_VERSION_BULK => {
            let tick = dec.u64().ok()?;
            let template_index = dec.u64().ok()?;
            let params = take_pairs(&mut dec).ok()?;
            UsageLogBody::Bulk(BulkRecord {
                activity,
                template_index,
                params,
                tick,
            })
        }
        _ => return None,
    };
    dec.finish().ok()?;
    Some(body)
}

/// Parse a [`transfer_event_topic`] log into `(tick, sealed payload)`.
pub fn parse_transfer_log(log: &LogEvent) -> Option<(u64, Vec<u8>)> {
    if log.topics.first() != Some(&transfer_event_topic()) {
        return None;
    }
    let mut dec = Decoder::new(&log.data);
    let tick = dec.u64().ok()?;
    let sealed = dec.bytes().ok()?;
    dec.finish().ok()?;
    Some((tick, sealed))
}

/// Parse a [`violation_event_topic`] log into `(tick, decision kind)`.
pub fn parse_violation_log(log: &LogEvent) -> Option<(u64, ActionKind)> {
    if log.topics.first() != Some(&violation_event_topic()) {
        return None;
    }
    let mut dec = Decoder::new(&log.data);
    let tick = dec.u64().ok()?;
    let kind = crate::compiler::decision_kind_from_byte(dec.u8().ok()?)?;
    dec.finish().ok()?;
    Some((tick, kind))
}

fn expect_arity(args: &[AbiValue], n: usize) -> Result<(), VmError> {
    if args.len() != n {
        return Err(revert(format!("expected {n} arguments, got {}", args.len())));
    }
    Ok(())
}

fn arg_u64(args: &[AbiValue], i: usize) -> Result<u64, VmError> {
    args.get(i)
        .and_then(AbiValue::as_u64)
        .ok_or_else(|| revert(format!("argument {i}: expected u64")))
}

fn arg_b32(args: &[AbiValue], i: usize) -> Result<Hash32, VmError> {
    args.get(i)
        .and_then(AbiValue::as_b32)
        .ok_or_else(|| revert(format!("argument {i}: expected 32 bytes")))
}

fn arg_addr(args: &[AbiValue], i: usize) -> Result<Address, VmError> {
    args.get(i)
        .and_then(AbiValue::as_addr)
        .ok_or_else(|| revert(format!("argument {i}: expected address")))
}

fn arg_bytes<'a>(args: &'a [AbiValue], i: usize) -> Result<&'a [u8], VmError> {
    args.get(i)
        .and_then(AbiValue::as_bytes)
        .ok_or_else(|| revert(format!("argument {i}: expected bytes")))
}

fn probe_call(
    ctx: &mut CallCtx<'_>,
    selector: [u8; 4],
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    use crate::ledger::{selector as sel, slot_key};
    if selector == sel("setValue") {
        expect_arity(args, 1)?;
        let mut word = [0u8; 32];
        word[24..].copy_from_slice(&arg_u64(args, 0)?.to_be_bytes());
        ctx.write(slot_key(0), Hash32(word))?;
        Ok(vec![])
    } else if selector == sel("getValue") {
        expect_arity(args, 0)?;
        let word = ctx.read(slot_key(0))?;
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&word.0[24..]);
        Ok(vec![AbiValue::U64(u64::from_be_bytes(bytes))])
    } else if selector == sel("burn") {
        expect_arity(args, 1)?;
        ctx.compute(arg_u64(args, 0)?)?;
        Ok(vec![])
    } else {
        Err(revert("unknown function selector"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topics_are_distinct_per_record_type() {
        let all = [
            usage_event_topic(),
            transfer_event_topic(),
            violation_event_topic(),
            child_linked_topic(),
            joined_topic(),
            left_topic(),
            data_ref_topic(),
        ];
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                assert_eq!(i == j, a == b);
            }
        }
    }

    #[test]
    fn address_topics_round_trip() {
        let addr = Address([0x5a; 20]);
        assert_eq!(address_from_topic(&address_topic(&addr)), addr);
    }

    #[test]
    fn usage_records_round_trip_through_log_form() {
        let record = UsageRecord {
            activity: Hash32([1; 32]),
            attrs: vec![(Hash32([2; 32]), Hash32([3; 32]))],
            decision: ActionKind::Modify,
            delay_ticks: 0,
            substitutions: vec![(Hash32([2; 32]), Hash32([9; 32]))],
            tick: 77,
        };
        let log = LogEvent {
            address: Address([0; 20]),
            topics: vec![usage_event_topic(), record.activity],
            data: record.encode_data(),
        };
        assert_eq!(parse_usage_log(&log), Some(UsageLogBody::Single(record)));
    }

    #[test]
    fn bulk_records_round_trip_through_log_form() {
        let record = BulkRecord {
            activity: Hash32([4; 32]),
            template_index: 2,
            params: vec![(Hash32([5; 32]), Hash32([6; 32]))],
            tick: 11,
        };
        let log = LogEvent {
            address: Address([0; 20]),
            topics: vec![usage_event_topic(), record.activity],
            data: record.encode_data(),
        };
        assert_eq!(parse_usage_log(&log), Some(UsageLogBody::Bulk(record)));
    }

    #[test]
    fn foreign_or_truncated_logs_parse_to_none() {
        let log = LogEvent {
            address: Address([0; 20]),
            topics: vec![joined_topic(), Hash32([1; 32])],
            data: vec![],
        };
        assert_eq!(parse_usage_log(&log), None);

        let mut truncated = LogEvent {
            address: Address([0; 20]),
            topics: vec![usage_event_topic(), Hash32([1; 32])],
            data: UsageRecord {
                activity: Hash32([1; 32]),
                attrs: vec![],
                decision: ActionKind::Allow,
                delay_ticks: 0,
                substitutions: vec![],
                tick: 0,
            }
            .encode_data(),
        };
        truncated.data.pop();
        assert_eq!(parse_usage_log(&truncated), None);
    }
}
