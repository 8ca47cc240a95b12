//! The per-pair usage contract: one data subject, one controller, one
//! obfuscated policy machine.
//!
//! The blueprint carries everything the pair agreed on: the compiled policy,
//! the data reference digests, the pattern nonce sealed to the controller's
//! box key, and the storage mode for the reference digests. On-chain state is
//! a single packed metadata slot, the policy machine's fixed region, and two
//! sparse regions for reference digests and linked child contracts.
//!
//! Decision protocol: a notified event is decided against the machine first;
//! only permitted events advance the window clock and are folded into
//! history, so denied events never consume budgets. Every notification
//! leaves exactly one `UsageEventRecord` log, whatever the decision.

use serde::{Deserialize, Serialize};

use crate::canon::{CanonDecode, CanonEncode, CanonError, Decoder, Encoder};
use crate::compiler::{CompiledPolicy, FieldRef, LayoutAllocator, ObfEvent, SlotCache};
use crate::crypto::{Address, Hash32};
use crate::ledger::{revert, selector, slot_key, AbiValue, CallCtx, VmError};
use crate::provenance::DataReference;

use super::{
    address_topic, arg_addr, arg_b32, arg_bytes, arg_u64, child_linked_topic, data_ref_topic,
    decode_pairs, encode_pairs, expect_arity, left_topic, transfer_event_topic,
    usage_event_topic, violation_event_topic, JoinMode, StorageMode, UsageRecord,
};

/// 1 when the contract still accepts events; cleared by `deactivate`.
const META_ACTIVE: FieldRef = FieldRef {
    slot: 0,
    offset: 0,
    len: 1,
};
/// Tick of the latest accepted event or time step.
const META_LAST_TICK: FieldRef = FieldRef {
    slot: 0,
    offset: 1,
    len: 8,
};
const META_REF_COUNT: FieldRef = FieldRef {
    slot: 0,
    offset: 9,
    len: 4,
};
const META_CHILD_COUNT: FieldRef = FieldRef {
    slot: 0,
    offset: 13,
    len: 4,
};

/// First slot of the data reference region (two slots per reference).
pub const REF_REGION: u32 = 1 << 24;
/// First slot of the linked-children region (one slot per child).
pub const CHILD_REGION: u32 = 1 << 25;

/// Allocator with the metadata fields already reserved. Policies destined
/// for this blueprint must be compiled from this allocator so their fields
/// pack around the metadata instead of on top of it.
pub fn subject_layout() -> LayoutAllocator {
    let mut layout = LayoutAllocator::new();
    debug_assert_eq!(layout.alloc(1), META_ACTIVE);
    debug_assert_eq!(layout.alloc(8), META_LAST_TICK);
    debug_assert_eq!(layout.alloc(4), META_REF_COUNT);
    debug_assert_eq!(layout.alloc(4), META_CHILD_COUNT);
    layout
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubjectInit {
    pub subject: Address,
    pub controller: Address,
    /// Pattern nonce, sealed to the controller's box key. Only the parties
    /// can relate on-chain digests back to plaintext identifiers.
    #[serde(with = "hex::serde")]
    pub sealed_nonce: Vec<u8>,
    pub data_refs: Vec<DataReference>,
    pub storage_mode: StorageMode,
    pub policy: CompiledPolicy,
    /// Contract this one was derived from on a transfer, if any.
    pub parent: Option<Address>,
    pub join_mode: JoinMode,
    pub deploy_tick: u64,
    /// Obfuscated `__init` marker, recorded as history at deployment so
    /// deadlines can be phrased relative to contract creation.
    pub init_event: ObfEvent,
    /// Obfuscated `timeStep` marker, evaluated by `notifyTimeStep`.
    pub time_step_event: ObfEvent,
}

impl CanonEncode for SubjectInit {
    fn encode(&self, enc: &mut Encoder) {
        self.subject.encode(enc);
        self.controller.encode(enc);
        enc.put_bytes(&self.sealed_nonce);
        enc.put_seq(&self.data_refs);
        self.storage_mode.encode(enc);
        self.policy.encode(enc);
        enc.put_opt(&self.parent);
        self.join_mode.encode(enc);
        enc.put_u64(self.deploy_tick);
        self.init_event.encode(enc);
        self.time_step_event.encode(enc);
    }
}

impl CanonDecode for SubjectInit {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(SubjectInit {
            subject: Address::decode(dec)?,
            controller: Address::decode(dec)?,
            sealed_nonce: dec.bytes()?,
            data_refs: dec.seq()?,
            storage_mode: StorageMode::decode(dec)?,
            policy: CompiledPolicy::decode(dec)?,
            parent: dec.opt()?,
            join_mode: JoinMode::decode(dec)?,
            deploy_tick: dec.u64()?,
            init_event: ObfEvent::decode(dec)?,
            time_step_event: ObfEvent::decode(dec)?,
        })
    }
}

pub(super) fn construct(init: &SubjectInit, ctx: &mut CallCtx<'_>) -> Result<(), VmError> {
    let mut cache = SlotCache::new(ctx);
    init.policy.init_storage(&mut cache)?;
    cache.write_field(META_ACTIVE, 1)?;
    cache.write_field(META_LAST_TICK, init.deploy_tick)?;
    cache.write_field(META_REF_COUNT, init.data_refs.len() as u64)?;
    init.policy
        .record(&mut cache, &init.init_event, init.deploy_tick)?;
    cache.flush()?;

    match init.storage_mode {
        StorageMode::StateVariables => {
            for (i, data_ref) in init.data_refs.iter().enumerate() {
                let base = REF_REGION + 2 * i as u32;
                ctx.write(slot_key(base), data_ref.instantiation)?;
                ctx.write(slot_key(base + 1), data_ref.value)?;
            }
        }
        StorageMode::EventLogs => {
            for data_ref in &init.data_refs {
                let mut data = Vec::with_capacity(64);
                data.extend_from_slice(&data_ref.instantiation.0);
                data.extend_from_slice(&data_ref.value.0);
                ctx.emit(vec![data_ref_topic()], data)?;
            }
        }
    }
    Ok(())
}

pub(super) fn call(
    init: &SubjectInit,
    ctx: &mut CallCtx<'_>,
    sel: [u8; 4],
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    if sel == selector("checkEvent") {
        check_event(init, ctx, args)
    } else if sel == selector("notifyEvent") {
        notify_event(init, ctx, args)
    } else if sel == selector("notifyTimeStep") {
        notify_time_step(init, ctx, args)
    } else if sel == selector("requestTransfer") {
        request_transfer(init, ctx, args)
    } else if sel == selector("addChildContract") {
        add_child(init, ctx, args)
    } else if sel == selector("deactivate") {
        deactivate(init, ctx, args)
    } else if sel == selector("isActive") {
        expect_arity(args, 0)?;
        let mut cache = SlotCache::new(ctx);
        let active = cache.read_field(META_ACTIVE)? != 0;
        Ok(vec![AbiValue::Bool(active)])
    } else if sel == selector("lastTick") {
        expect_arity(args, 0)?;
        let mut cache = SlotCache::new(ctx);
        Ok(vec![AbiValue::U64(cache.read_field(META_LAST_TICK)?)])
    } else if sel == selector("refCount") {
        expect_arity(args, 0)?;
        let mut cache = SlotCache::new(ctx);
        Ok(vec![AbiValue::U64(cache.read_field(META_REF_COUNT)?)])
    } else if sel == selector("childCount") {
        expect_arity(args, 0)?;
        let mut cache = SlotCache::new(ctx);
        Ok(vec![AbiValue::U64(cache.read_field(META_CHILD_COUNT)?)])
    } else if sel == selector("dataRef") {
        data_ref_at(init, ctx, args)
    } else if sel == selector("childAt") {
        child_at(ctx, args)
    } else if sel == selector("getSubject") {
        expect_arity(args, 0)?;
        Ok(vec![AbiValue::Addr(init.subject)])
    } else if sel == selector("getController") {
        expect_arity(args, 0)?;
        Ok(vec![AbiValue::Addr(init.controller)])
    } else if sel == selector("getParent") {
        expect_arity(args, 0)?;
        match init.parent {
            Some(parent) => Ok(vec![AbiValue::Bool(true), AbiValue::Addr(parent)]),
            None => Ok(vec![AbiValue::Bool(false)]),
        }
    } else {
        Err(revert("unknown function selector"))
    }
}

/// Decode `(activity, tick, attrs)` call arguments into an obfuscated event.
fn event_args(args: &[AbiValue]) -> Result<(ObfEvent, u64), VmError> {
    let activity = arg_b32(args, 0)?;
    let tick = arg_u64(args, 1)?;
    let attrs =
        decode_pairs(arg_bytes(args, 2)?).ok_or_else(|| revert("malformed attribute pairs"))?;
    for pair in attrs.windows(2) {
        if pair[0].0 >= pair[1].0 {
            return Err(revert("attribute pairs must be sorted by name digest"));
        }
    }
    Ok((ObfEvent { activity, attrs }, tick))
}

fn require_active<'c>(
    cache: &mut SlotCache<'_, CallCtx<'c>>,
) -> Result<(), VmError> {
    if cache.read_field(META_ACTIVE)? == 0 {
        return Err(revert("contract is deactivated"));
    }
    Ok(())
}

fn decision_values(kind_byte: u8, delay: u64, substitutions: &[(Hash32, Hash32)]) -> Vec<AbiValue> {
    vec![
        AbiValue::U64(u64::from(kind_byte)),
        AbiValue::U64(delay),
        AbiValue::Bytes(encode_pairs(substitutions)),
    ]
}

/// Probe the policy without touching history. Callable by anyone, also via
/// read-only queries.
fn check_event(
    init: &SubjectInit,
    ctx: &mut CallCtx<'_>,
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    expect_arity(args, 3)?;
    let (event, tick) = event_args(args)?;
    let mut cache = SlotCache::new(ctx);
    require_active(&mut cache)?;
    let last_tick = cache.read_field(META_LAST_TICK)?;
    if tick < last_tick {
        return Err(revert("tick is behind the contract clock"));
    }
    let decision = init.policy.decide(&mut cache, &event, tick, last_tick)?;
    Ok(decision_values(
        decision.kind_byte(),
        decision.delay_ticks,
        &decision.substitutions,
    ))
}

fn notify_event(
    init: &SubjectInit,
    ctx: &mut CallCtx<'_>,
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    expect_arity(args, 3)?;
    if ctx.caller != init.controller {
        return Err(revert("only the controller reports usage"));
    }
    let (event, tick) = event_args(args)?;
    let mut cache = SlotCache::new(ctx);
    require_active(&mut cache)?;
    let last_tick = cache.read_field(META_LAST_TICK)?;
    if tick < last_tick {
        return Err(revert("tick is behind the contract clock"));
    }
    let decision = init.policy.decide(&mut cache, &event, tick, last_tick)?;
    if decision.permits() {
        init.policy.advance(&mut cache, last_tick, tick)?;
        let actual = event.substitute(&decision.substitutions);
        init.policy.record(&mut cache, &actual, tick)?;
        cache.write_field(META_LAST_TICK, tick)?;
    }
    cache.flush()?;

    let record = UsageRecord {
        activity: event.activity,
        attrs: event.attrs,
        decision: decision.kind,
        delay_ticks: decision.delay_ticks,
        substitutions: decision.substitutions.clone(),
        tick,
    };
    let activity = record.activity;
    let data = record.encode_data();
    ctx.emit(vec![usage_event_topic(), activity], data)?;
    Ok(decision_values(
        decision.kind_byte(),
        decision.delay_ticks,
        &decision.substitutions,
    ))
}

/// Move the contract clock without an event. The policy's `timeStep` marker
/// is evaluated against the pre-move clock; a denying mechanism leaves a
/// `ViolationEvent` log. The marker itself is never folded into history.
fn notify_time_step(
    init: &SubjectInit,
    ctx: &mut CallCtx<'_>,
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    expect_arity(args, 1)?;
    if ctx.caller != init.controller && ctx.caller != init.subject {
        return Err(revert("only the parties move the clock"));
    }
    let tick = arg_u64(args, 0)?;
    let mut cache = SlotCache::new(ctx);
    require_active(&mut cache)?;
    let last_tick = cache.read_field(META_LAST_TICK)?;
    if tick <= last_tick {
        return Err(revert("time steps must strictly increase"));
    }
    let matched = init
        .policy
        .first_match(&mut cache, &init.time_step_event, tick, last_tick)?;
    init.policy.advance(&mut cache, last_tick, tick)?;
    cache.write_field(META_LAST_TICK, tick)?;
    cache.flush()?;

    let violation = matched.filter(|d| !d.permits());
    if let Some(decision) = &violation {
        let mut enc = Encoder::new();
        enc.put_u64(tick);
        enc.put_u8(decision.kind_byte());
        ctx.emit(vec![violation_event_topic()], enc.finish())?;
    }
    Ok(vec![AbiValue::Bool(violation.is_some())])
}

/// Ask permission to hand the data to a further processor. The decision is
/// logged like any usage event; only a permit also emits the sealed
/// `TransferEvent` payload for the recipient.
fn request_transfer(
    init: &SubjectInit,
    ctx: &mut CallCtx<'_>,
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    expect_arity(args, 4)?;
    if ctx.caller != init.controller {
        return Err(revert("only the controller transfers data"));
    }
    let (event, tick) = event_args(args)?;
    let sealed = arg_bytes(args, 3)?.to_vec();
    let mut cache = SlotCache::new(ctx);
    require_active(&mut cache)?;
    let last_tick = cache.read_field(META_LAST_TICK)?;
    if tick < last_tick {
        return Err(revert("tick is behind the contract clock"));
    }
    let decision = init.policy.decide(&mut cache, &event, tick, last_tick)?;
    if decision.permits() {
        init.policy.advance(&mut cache, last_tick, tick)?;
        let actual = event.substitute(&decision.substitutions);
        init.policy.record(&mut cache, &actual, tick)?;
        cache.write_field(META_LAST_TICK, tick)?;
    }
    cache.flush()?;

    let record = UsageRecord {
        activity: event.activity,
        attrs: event.attrs,
        decision: decision.kind,
        delay_ticks: decision.delay_ticks,
        substitutions: decision.substitutions,
        tick,
    };
    let activity = record.activity;
    let data = record.encode_data();
    ctx.emit(vec![usage_event_topic(), activity], data)?;

    if record.decision == crate::policy::ActionKind::Allow
        || record.decision == crate::policy::ActionKind::Modify
    {
        let mut enc = Encoder::new();
        enc.put_u64(tick);
        enc.put_bytes(&sealed);
        ctx.emit(vec![transfer_event_topic()], enc.finish())?;
        Ok(vec![AbiValue::Bool(true)])
    } else {
        Ok(vec![AbiValue::Bool(false)])
    }
}

/// Link the contract a recipient deployed for transferred data. The link is
/// active immediately under [`JoinMode::AutoJoin`] or when the subject makes
/// the call; under [`JoinMode::ExplicitRejoin`] a controller-made link stays
/// passive until the subject confirms it by calling again.
fn add_child(
    init: &SubjectInit,
    ctx: &mut CallCtx<'_>,
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    expect_arity(args, 1)?;
    if ctx.caller != init.controller && ctx.caller != init.subject {
        return Err(revert("only the parties link child contracts"));
    }
    let child = arg_addr(args, 0)?;
    if !ctx.contract_exists(&child)? {
        return Err(revert("no contract at the child address"));
    }
    let newly_active =
        ctx.caller == init.subject || init.join_mode == JoinMode::AutoJoin;

    let mut cache = SlotCache::new(ctx);
    require_active(&mut cache)?;
    let count = cache.read_field(META_CHILD_COUNT)? as u32;
    let mut active = newly_active;
    let mut found = false;
    for i in 0..count {
        let slot = cache.read_slot(CHILD_REGION + i)?;
        if slot[..20] == child.0 {
            active = newly_active || slot[20] != 0;
            let mut updated = slot;
            updated[20] = u8::from(active);
            cache.write_slot(CHILD_REGION + i, updated);
            found = true;
            break;
        }
    }
    if !found {
        let mut word = [0u8; 32];
        word[..20].copy_from_slice(&child.0);
        word[20] = u8::from(active);
        cache.write_slot(CHILD_REGION + count, word);
        cache.write_field(META_CHILD_COUNT, u64::from(count) + 1)?;
    }
    cache.flush()?;
    ctx.emit(
        vec![child_linked_topic(), address_topic(&child)],
        vec![u8::from(active)],
    )?;
    Ok(vec![AbiValue::Bool(active)])
}

/// The subject's exit. Irrevocable: no entry point can set the flag again.
fn deactivate(
    init: &SubjectInit,
    ctx: &mut CallCtx<'_>,
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    expect_arity(args, 0)?;
    if ctx.caller != init.subject {
        return Err(revert("only the subject deactivates"));
    }
    let mut cache = SlotCache::new(ctx);
    require_active(&mut cache)?;
    cache.write_field(META_ACTIVE, 0)?;
    cache.flush()?;
    ctx.emit(vec![left_topic(), address_topic(&init.subject)], vec![])?;
    Ok(vec![])
}

fn data_ref_at(
    init: &SubjectInit,
    ctx: &mut CallCtx<'_>,
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    expect_arity(args, 1)?;
    if init.storage_mode != StorageMode::StateVariables {
        return Err(revert("data references live in the log, not in storage"));
    }
    let index = arg_u64(args, 0)?;
    let mut cache = SlotCache::new(ctx);
    if index >= cache.read_field(META_REF_COUNT)? {
        return Err(revert("data reference index out of range"));
    }
    let base = REF_REGION + 2 * index as u32;
    let instantiation = cache.read_slot(base)?;
    let value = cache.read_slot(base + 1)?;
    Ok(vec![
        AbiValue::B32(Hash32(instantiation)),
        AbiValue::B32(Hash32(value)),
    ])
}

fn child_at(ctx: &mut CallCtx<'_>, args: &[AbiValue]) -> Result<Vec<AbiValue>, VmError> {
    expect_arity(args, 1)?;
    let index = arg_u64(args, 0)?;
    let mut cache = SlotCache::new(ctx);
    if index >= cache.read_field(META_CHILD_COUNT)? {
        return Err(revert("child index out of range"));
    }
    let slot = cache.read_slot(CHILD_REGION + index as u32)?;
    let mut addr = [0u8; 20];
    addr.copy_from_slice(&slot[..20]);
    Ok(vec![
        AbiValue::Addr(Address(addr)),
        AbiValue::Bool(slot[20] != 0),
    ])
}
