//! The controller-side membership contract.
//!
//! One contract per controller, acting as a repository of configurable
//! policy templates plus a members map. Subjects join and leave; the
//! controller logs bulk executions that apply one activity to every member
//! (or a parameterized subset) in a single log entry. Storage holds nothing
//! except the membership map: templates live in the blueprint and bulk
//! executions live in the log.

use serde::{Deserialize, Serialize};

use crate::canon::{CanonDecode, CanonEncode, CanonError, Decoder, Encoder};
use crate::crypto::{sha3_domain, Address, Hash32};
use crate::ledger::{revert, selector, AbiValue, CallCtx, VmError};
use crate::policy::{parse_policy, Policy};

use super::{
    address_topic, arg_addr, arg_b32, arg_bytes, arg_u64, decode_pairs, expect_arity,
    joined_topic, left_topic, usage_event_topic, BulkRecord, JoinMode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ControllerInit {
    pub controller: Address,
    /// Policy template text in the documented grammar, stored verbatim.
    /// Bulk event logs reference items of this text by position.
    pub template_text: String,
    /// How members carry over into child contracts.
    pub join_mode: JoinMode,
}

impl ControllerInit {
    fn policy(&self) -> Result<Policy, VmError> {
        parse_policy(&self.template_text)
            .map_err(|err| revert(format!("template text does not parse: {err}")))
    }
}

impl CanonEncode for ControllerInit {
    fn encode(&self, enc: &mut Encoder) {
        self.controller.encode(enc);
        enc.put_str(&self.template_text);
        self.join_mode.encode(enc);
    }
}

impl CanonDecode for ControllerInit {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(ControllerInit {
            controller: Address::decode(dec)?,
            template_text: dec.str()?,
            join_mode: JoinMode::decode(dec)?,
        })
    }
}

/// Storage key of a member's slot: a domain-separated digest, so the map
/// cannot collide with numbered slots.
fn member_key(member: &Address) -> Hash32 {
    sha3_domain("member.v1", |enc| enc.put_raw(&member.0))
}

pub(super) fn construct(init: &ControllerInit, ctx: &mut CallCtx<'_>) -> Result<(), VmError> {
    ctx.compute(init.template_text.len() as u64)?;
    let policy = init.policy()?;
    if policy.items.is_empty() {
        return Err(revert("template text declares no mechanisms"));
    }
    Ok(())
}

pub(super) fn call(
    init: &ControllerInit,
    ctx: &mut CallCtx<'_>,
    sel: [u8; 4],
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    if sel == selector("join") {
        expect_arity(args, 0)?;
        let member = ctx.caller;
        let key = member_key(&member);
        if ctx.read(key)? != Hash32::ZERO {
            return Err(revert("already a member"));
        }
        ctx.write(key, flag_word(true))?;
        ctx.emit(vec![joined_topic(), address_topic(&member)], vec![])?;
        Ok(vec![])
    } else if sel == selector("leave") {
        expect_arity(args, 0)?;
        let member = ctx.caller;
        let key = member_key(&member);
        if ctx.read(key)? == Hash32::ZERO {
            return Err(revert("not a member"));
        }
        ctx.write(key, flag_word(false))?;
        ctx.emit(vec![left_topic(), address_topic(&member)], vec![])?;
        Ok(vec![])
    } else if sel == selector("isMember") {
        expect_arity(args, 1)?;
        let member = arg_addr(args, 0)?;
        let word = ctx.read(member_key(&member))?;
        Ok(vec![AbiValue::Bool(word != Hash32::ZERO)])
    } else if sel == selector("logBulkEvent") {
        log_bulk_event(init, ctx, args)
    } else if sel == selector("templateText") {
        expect_arity(args, 0)?;
        Ok(vec![AbiValue::Str(init.template_text.clone())])
    } else if sel == selector("templateCount") {
        expect_arity(args, 0)?;
        Ok(vec![AbiValue::U64(init.policy()?.items.len() as u64)])
    } else if sel == selector("getController") {
        expect_arity(args, 0)?;
        Ok(vec![AbiValue::Addr(init.controller)])
    } else if sel == selector("getJoinMode") {
        expect_arity(args, 0)?;
        let mode = match init.join_mode {
            JoinMode::AutoJoin => 0,
            JoinMode::ExplicitRejoin => 1,
        };
        Ok(vec![AbiValue::U64(mode)])
    } else {
        Err(revert("unknown function selector"))
    }
}

fn flag_word(set: bool) -> Hash32 {
    let mut word = [0u8; 32];
    word[31] = u8::from(set);
    Hash32(word)
}

/// One log standing for a bulk execution over the membership: the activity
/// and parameters arrive as digests, the template reference points into the
/// blueprint's policy text.
fn log_bulk_event(
    init: &ControllerInit,
    ctx: &mut CallCtx<'_>,
    args: &[AbiValue],
) -> Result<Vec<AbiValue>, VmError> {
    expect_arity(args, 4)?;
    if ctx.caller != init.controller {
        return Err(revert("only the controller logs bulk executions"));
    }
    let template_index = arg_u64(args, 0)?;
    let activity = arg_b32(args, 1)?;
    let params =
        decode_pairs(arg_bytes(args, 2)?).ok_or_else(|| revert("malformed parameter pairs"))?;
    let tick = arg_u64(args, 3)?;
    ctx.compute(2)?;
    let templates = init.policy()?.items.len() as u64;
    if template_index >= templates {
        return Err(revert(format!(
            "template reference {template_index} out of range ({templates} declared)"
        )));
    }
    let record = BulkRecord {
        activity,
        template_index,
        params,
        tick,
    };
    let data = record.encode_data();
    ctx.emit(vec![usage_event_topic(), activity], data)?;
    Ok(vec![])
}
