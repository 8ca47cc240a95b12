//! Runtime for compiled policies over slot storage.
//!
//! The machine reads and writes storage through a [`SlotCache`], so each
//! distinct slot is loaded at most once per call and written at most once at
//! flush time regardless of how many packed fields it holds. Temporal node
//! state:
//!
//! - [`MatchNode`]: one flag byte plus the tick of the most recent match.
//!   True at tick `t` when the last match lies in `[t - window + 1, t]`.
//! - [`CountNode`]: a ring buffer of per-tick match counts (`window`
//!   buckets, eight per slot), a head index equal to `last_tick % window`,
//!   and a running count equal to the sum of the buckets.
//!
//! Probing never mutates; the contract advances window state only when an
//! event is recorded or time moves, so denied events leave budgets intact.

use std::collections::{BTreeMap, BTreeSet};
use std::convert::Infallible;

use serde::{Deserialize, Serialize};

use crate::canon::{CanonDecode, CanonEncode, CanonError, Decoder, Encoder};
use crate::crypto::Hash32;
use crate::policy::{ActionKind, DefaultDecision};

use super::layout::FieldRef;
use super::obfuscate::{match_obfuscated, ObfEvent, ObfuscatedPattern};

/// Slot-addressed storage plus a compute-step meter. The ledger implements
/// this with gas charging; tests implement it with a plain map.
pub trait PolicyStore {
    type Error;
    fn load(&mut self, slot: u32) -> Result<[u8; 32], Self::Error>;
    fn store(&mut self, slot: u32, value: [u8; 32]) -> Result<(), Self::Error>;
    fn step(&mut self, units: u64) -> Result<(), Self::Error>;
}

impl PolicyStore for BTreeMap<u32, [u8; 32]> {
    type Error = Infallible;

    fn load(&mut self, slot: u32) -> Result<[u8; 32], Infallible> {
        Ok(self.get(&slot).copied().unwrap_or([0u8; 32]))
    }

    fn store(&mut self, slot: u32, value: [u8; 32]) -> Result<(), Infallible> {
        self.insert(slot, value);
        Ok(())
    }

    fn step(&mut self, _units: u64) -> Result<(), Infallible> {
        Ok(())
    }
}

/// Read cache and write combiner over a [`PolicyStore`].
pub struct SlotCache<'a, S: PolicyStore> {
    store: &'a mut S,
    loaded: BTreeMap<u32, [u8; 32]>,
    dirty: BTreeSet<u32>,
}

impl<'a, S: PolicyStore> SlotCache<'a, S> {
    pub fn new(store: &'a mut S) -> Self {
        SlotCache {
            store,
            loaded: BTreeMap::new(),
            dirty: BTreeSet::new(),
        }
    }

    pub fn step(&mut self, units: u64) -> Result<(), S::Error> {
        self.store.step(units)
    }

    fn slot(&mut self, slot: u32) -> Result<[u8; 32], S::Error> {
        if let Some(v) = self.loaded.get(&slot) {
            return Ok(*v);
        }
        let v = self.store.load(slot)?;
        self.loaded.insert(slot, v);
        Ok(v)
    }

    /// Cached whole-slot read.
    pub fn read_slot(&mut self, slot: u32) -> Result<[u8; 32], S::Error> {
        self.slot(slot)
    }

    /// Big-endian numeric field read (up to 8 bytes).
    pub fn read_field(&mut self, field: FieldRef) -> Result<u64, S::Error> {
        debug_assert!(field.len <= 8);
        let slot = self.slot(field.slot)?;
        let mut out = 0u64;
        for i in 0..field.len {
            out = (out << 8) | u64::from(slot[(field.offset + i) as usize]);
        }
        Ok(out)
    }

    /// Big-endian numeric field write. Values must fit the field width.
    pub fn write_field(&mut self, field: FieldRef, value: u64) -> Result<(), S::Error> {
        debug_assert!(field.len <= 8);
        debug_assert!(field.len == 8 || value < 1u64 << (8 * field.len));
        let mut slot = self.slot(field.slot)?;
        let mut v = value;
        for i in (0..field.len).rev() {
            slot[(field.offset + i) as usize] = (v & 0xff) as u8;
            v >>= 8;
        }
        self.loaded.insert(field.slot, slot);
        self.dirty.insert(field.slot);
        Ok(())
    }

    /// Whole-slot overwrite, no read-back of the previous value.
    pub fn write_slot(&mut self, slot: u32, value: [u8; 32]) {
        self.loaded.insert(slot, value);
        self.dirty.insert(slot);
    }

    /// Write back every dirty slot, once each.
    pub fn flush(self) -> Result<(), S::Error> {
        for slot in self.dirty {
            let value = self.loaded[&slot];
            self.store.store(slot, value)?;
        }
        Ok(())
    }

    pub fn dirty_count(&self) -> usize {
        self.dirty.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchNode {
    pub pattern: ObfuscatedPattern,
    pub window: u64,
    pub flag: FieldRef,
    pub last_true: FieldRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountNode {
    pub pattern: ObfuscatedPattern,
    pub limit: u64,
    pub window: u64,
    pub head: FieldRef,
    pub running: FieldRef,
    pub buckets_start: u32,
}

impl CountNode {
    fn bucket(&self, position: u64) -> FieldRef {
        debug_assert!(position < self.window);
        FieldRef {
            slot: self.buckets_start + (position / 8) as u32,
            offset: ((position % 8) * 4) as u8,
            len: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CompiledNode {
    Always,
    Match(MatchNode),
    Count(CountNode),
    Not(Box<CompiledNode>),
    And(Vec<CompiledNode>),
    Or(Vec<CompiledNode>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledAction {
    pub kind: ActionKind,
    pub delay_ticks: u64,
    /// Obfuscated replacements: (attribute name digest, new value digest).
    pub substitutions: Vec<(Hash32, Hash32)>,
}

impl CompiledAction {
    fn to_decision(&self) -> CompiledDecision {
        CompiledDecision {
            kind: self.kind,
            delay_ticks: self.delay_ticks,
            substitutions: self.substitutions.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledMechanism {
    pub trigger: ObfuscatedPattern,
    pub condition: CompiledNode,
    pub action: CompiledAction,
}

/// The obfuscated decision produced on-chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledDecision {
    pub kind: ActionKind,
    pub delay_ticks: u64,
    pub substitutions: Vec<(Hash32, Hash32)>,
}

impl CompiledDecision {
    pub fn permits(&self) -> bool {
        matches!(self.kind, ActionKind::Allow | ActionKind::Modify)
    }

    pub fn kind_byte(&self) -> u8 {
        decision_kind_byte(self.kind)
    }
}

pub fn decision_kind_byte(kind: ActionKind) -> u8 {
    match kind {
        ActionKind::Allow => 0,
        ActionKind::Deny => 1,
        ActionKind::Modify => 2,
        ActionKind::Delay => 3,
    }
}

pub fn decision_kind_from_byte(byte: u8) -> Option<ActionKind> {
    Some(match byte {
        0 => ActionKind::Allow,
        1 => ActionKind::Deny,
        2 => ActionKind::Modify,
        3 => ActionKind::Delay,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledPolicy {
    pub mechanisms: Vec<CompiledMechanism>,
    pub default: DefaultDecision,
    /// Size of the fixed storage region, including ring-buffer slots.
    pub slots_used: u32,
}

impl CompiledPolicy {
    /// Decide a tentative event: first firing mechanism wins, otherwise the
    /// default. Pure with respect to storage.
    pub fn decide<S: PolicyStore>(
        &self,
        cache: &mut SlotCache<'_, S>,
        event: &ObfEvent,
        tick: u64,
        last_tick: u64,
    ) -> Result<CompiledDecision, S::Error> {
        Ok(self
            .first_match(cache, event, tick, last_tick)?
            .unwrap_or_else(|| super::default_decision(self.default)))
    }

    /// As [`Self::decide`], but `None` when no mechanism fires.
    pub fn first_match<S: PolicyStore>(
        &self,
        cache: &mut SlotCache<'_, S>,
        event: &ObfEvent,
        tick: u64,
        last_tick: u64,
    ) -> Result<Option<CompiledDecision>, S::Error> {
        for mechanism in &self.mechanisms {
            cache.step(2 + 2 * mechanism.trigger.attrs.len() as u64)?;
            if !match_obfuscated(&mechanism.trigger, event) {
                continue;
            }
            if eval_node(&mechanism.condition, cache, tick, last_tick)? {
                return Ok(Some(mechanism.action.to_decision()));
            }
        }
        Ok(None)
    }

    /// Slide every ring buffer forward from `from_tick` to `to_tick`. Must
    /// be called exactly when the contract's last-update tick moves.
    pub fn advance<S: PolicyStore>(
        &self,
        cache: &mut SlotCache<'_, S>,
        from_tick: u64,
        to_tick: u64,
    ) -> Result<(), S::Error> {
        debug_assert!(to_tick >= from_tick);
        if to_tick == from_tick {
            return Ok(());
        }
        for node in self.count_nodes() {
            advance_count(node, cache, from_tick, to_tick)?;
        }
        Ok(())
    }

    /// Fold a recorded actual event into every node's state. The caller must
    /// have advanced the windows to `tick` first.
    pub fn record<S: PolicyStore>(
        &self,
        cache: &mut SlotCache<'_, S>,
        event: &ObfEvent,
        tick: u64,
    ) -> Result<(), S::Error> {
        for mechanism in &self.mechanisms {
            record_into(&mechanism.condition, cache, event, tick)?;
        }
        Ok(())
    }

    /// Zero-initialize the fixed storage region so that every slot the
    /// policy will ever touch exists from deployment on.
    pub fn init_storage<S: PolicyStore>(
        &self,
        cache: &mut SlotCache<'_, S>,
    ) -> Result<(), S::Error> {
        for slot in 0..self.slots_used {
            cache.write_slot(slot, [0u8; 32]);
        }
        Ok(())
    }

    fn count_nodes(&self) -> Vec<&CountNode> {
        let mut out = Vec::new();
        for mechanism in &self.mechanisms {
            collect_counts(&mechanism.condition, &mut out);
        }
        out
    }
}

fn collect_counts<'a>(node: &'a CompiledNode, out: &mut Vec<&'a CountNode>) {
    match node {
        CompiledNode::Count(c) => out.push(c),
        CompiledNode::Not(child) => collect_counts(child, out),
        CompiledNode::And(terms) | CompiledNode::Or(terms) => {
            terms.iter().for_each(|t| collect_counts(t, out))
        }
        CompiledNode::Always | CompiledNode::Match(_) => {}
    }
}

fn eval_node<S: PolicyStore>(
    node: &CompiledNode,
    cache: &mut SlotCache<'_, S>,
    tick: u64,
    last_tick: u64,
) -> Result<bool, S::Error> {
    cache.step(1)?;
    match node {
        CompiledNode::Always => Ok(true),
        CompiledNode::Match(m) => {
            if cache.read_field(m.flag)? == 0 {
                return Ok(false);
            }
            let last_true = cache.read_field(m.last_true)?;
            Ok(last_true.saturating_add(m.window) > tick)
        }
        CompiledNode::Count(c) => eval_count(c, cache, tick, last_tick),
        CompiledNode::Not(child) => Ok(!eval_node(child, cache, tick, last_tick)?),
        CompiledNode::And(terms) => {
            for term in terms {
                if !eval_node(term, cache, tick, last_tick)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        CompiledNode::Or(terms) => {
            for term in terms {
                if eval_node(term, cache, tick, last_tick)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

fn eval_count<S: PolicyStore>(
    c: &CountNode,
    cache: &mut SlotCache<'_, S>,
    tick: u64,
    last_tick: u64,
) -> Result<bool, S::Error> {
    debug_assert!(tick >= last_tick);
    let running = cache.read_field(c.running)?;
    if tick == last_tick {
        return Ok(running <= c.limit);
    }
    if tick - last_tick >= c.window {
        // The whole buffer has aged out of the probe window, so the count
        // seen at `tick` is zero.
        return Ok(true);
    }
    // Buckets hold counts for ticks (last_tick - window, last_tick]; the
    // probe window is [tick - window + 1, tick]. Subtract buckets whose
    // ticks fall in (last_tick - window, tick - window].
    let window = i128::from(c.window);
    let first_buffered = i128::from(last_tick) - window + 1;
    let last_expired = i128::from(tick) - window;
    let mut expired = 0u64;
    let mut t = first_buffered.max(0);
    while t <= last_expired {
        cache.step(1)?;
        expired += cache.read_field(c.bucket(t as u64 % c.window))?;
        t += 1;
    }
    debug_assert!(expired <= running);
    Ok(running.saturating_sub(expired) <= c.limit)
}

fn advance_count<S: PolicyStore>(
    c: &CountNode,
    cache: &mut SlotCache<'_, S>,
    from_tick: u64,
    to_tick: u64,
) -> Result<(), S::Error> {
    let steps = (to_tick - from_tick).min(c.window);
    let mut running = cache.read_field(c.running)?;
    for i in 1..=steps {
        cache.step(1)?;
        let position = (from_tick + i) % c.window;
        let old = cache.read_field(c.bucket(position))?;
        if old != 0 {
            running -= old;
            cache.write_field(c.bucket(position), 0)?;
        }
    }
    cache.write_field(c.running, running)?;
    cache.write_field(c.head, to_tick % c.window)?;
    Ok(())
}

fn record_into<S: PolicyStore>(
    node: &CompiledNode,
    cache: &mut SlotCache<'_, S>,
    event: &ObfEvent,
    tick: u64,
) -> Result<(), S::Error> {
    cache.step(1)?;
    match node {
        CompiledNode::Always => Ok(()),
        CompiledNode::Match(m) => {
            cache.step(2 + 2 * m.pattern.attrs.len() as u64)?;
            if match_obfuscated(&m.pattern, event) {
                cache.write_field(m.flag, 1)?;
                cache.write_field(m.last_true, tick)?;
            }
            Ok(())
        }
        CompiledNode::Count(c) => {
            cache.step(2 + 2 * c.pattern.attrs.len() as u64)?;
            if match_obfuscated(&c.pattern, event) {
                let position = tick % c.window;
                let count = cache.read_field(c.bucket(position))?;
                cache.write_field(c.bucket(position), count + 1)?;
                let running = cache.read_field(c.running)?;
                cache.write_field(c.running, running + 1)?;
            }
            Ok(())
        }
        CompiledNode::Not(child) => record_into(child, cache, event, tick),
        CompiledNode::And(terms) | CompiledNode::Or(terms) => {
            for term in terms {
                record_into(term, cache, event, tick)?;
            }
            Ok(())
        }
    }
}

fn encode_node(node: &CompiledNode, enc: &mut Encoder) {
    match node {
        CompiledNode::Always => enc.put_u8(0),
        CompiledNode::Match(m) => {
            enc.put_u8(1);
            m.pattern.encode(enc);
            enc.put_u64(m.window);
            m.flag.encode(enc);
            m.last_true.encode(enc);
        }
        CompiledNode::Count(c) => {
            enc.put_u8(2);
            c.pattern.encode(enc);
            enc.put_u64(c.limit);
            enc.put_u64(c.window);
            c.head.encode(enc);
            c.running.encode(enc);
            enc.put_u32(c.buckets_start);
        }
        CompiledNode::Not(child) => {
            enc.put_u8(3);
            encode_node(child, enc);
        }
        CompiledNode::And(terms) => {
            enc.put_u8(4);
            enc.put_u32(terms.len() as u32);
            terms.iter().for_each(|t| encode_node(t, enc));
        }
        CompiledNode::Or(terms) => {
            enc.put_u8(5);
            enc.put_u32(terms.len() as u32);
            terms.iter().for_each(|t| encode_node(t, enc));
        }
    }
}

fn decode_node(dec: &mut Decoder<'_>) -> Result<CompiledNode, CanonError> {
    Ok(match dec.u8()? {
        0 => CompiledNode::Always,
        1 => CompiledNode::Match(MatchNode {
            pattern: ObfuscatedPattern::decode(dec)?,
            window: dec.u64()?,
            flag: FieldRef::decode(dec)?,
            last_true: FieldRef::decode(dec)?,
        }),
        2 => CompiledNode::Count(CountNode {
            pattern: ObfuscatedPattern::decode(dec)?,
            limit: dec.u64()?,
            window: dec.u64()?,
            head: FieldRef::decode(dec)?,
            running: FieldRef::decode(dec)?,
            buckets_start: dec.u32()?,
        }),
        3 => CompiledNode::Not(Box::new(decode_node(dec)?)),
        tag @ (4 | 5) => {
            let count = dec.u32()? as usize;
            let mut terms = Vec::with_capacity(count.min(1024));
            for _ in 0..count {
                terms.push(decode_node(dec)?);
            }
            if tag == 4 {
                CompiledNode::And(terms)
            } else {
                CompiledNode::Or(terms)
            }
        }
        tag => {
            return Err(CanonError::BadTag {
                what: "compiled node",
                tag,
            })
        }
    })
}

impl CanonEncode for FieldRef {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u32(self.slot);
        enc.put_u8(self.offset);
        enc.put_u8(self.len);
    }
}

impl CanonDecode for FieldRef {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(FieldRef {
            slot: dec.u32()?,
            offset: dec.u8()?,
            len: dec.u8()?,
        })
    }
}

impl CanonEncode for CompiledMechanism {
    fn encode(&self, enc: &mut Encoder) {
        self.trigger.encode(enc);
        encode_node(&self.condition, enc);
        enc.put_u8(decision_kind_byte(self.action.kind));
        enc.put_u64(self.action.delay_ticks);
        enc.put_u32(self.action.substitutions.len() as u32);
        for (name, value) in &self.action.substitutions {
            name.encode(enc);
            value.encode(enc);
        }
    }
}

impl CanonDecode for CompiledMechanism {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        let trigger = ObfuscatedPattern::decode(dec)?;
        let condition = decode_node(dec)?;
        let kind = decision_kind_from_byte(dec.u8()?).ok_or(CanonError::BadTag {
            what: "action kind",
            tag: 255,
        })?;
        let delay_ticks = dec.u64()?;
        let count = dec.u32()? as usize;
        let mut substitutions = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            substitutions.push((Hash32::decode(dec)?, Hash32::decode(dec)?));
        }
        Ok(CompiledMechanism {
            trigger,
            condition,
            action: CompiledAction {
                kind,
                delay_ticks,
                substitutions,
            },
        })
    }
}

impl CanonEncode for CompiledPolicy {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_seq(&self.mechanisms);
        enc.put_u8(match self.default {
            DefaultDecision::Allow => 0,
            DefaultDecision::Deny => 1,
        });
        enc.put_u32(self.slots_used);
    }
}

impl CanonDecode for CompiledPolicy {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        let mechanisms = dec.seq()?;
        let default = match dec.u8()? {
            0 => DefaultDecision::Allow,
            1 => DefaultDecision::Deny,
            tag => {
                return Err(CanonError::BadTag {
                    what: "default decision",
                    tag,
                })
            }
        };
        Ok(CompiledPolicy {
            mechanisms,
            default,
            slots_used: dec.u32()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{compile_mechanism, compile_policy, LayoutAllocator};
    use super::*;
    use crate::compiler::obfuscate_event;
    use crate::crypto::Nonce32;
    use crate::policy::{parse_policy, DefaultDecision, Event};

    struct CountingStore {
        map: BTreeMap<u32, [u8; 32]>,
        loads: usize,
        stores: usize,
    }

    impl CountingStore {
        fn new() -> Self {
            CountingStore {
                map: BTreeMap::new(),
                loads: 0,
                stores: 0,
            }
        }
    }

    impl PolicyStore for CountingStore {
        type Error = Infallible;

        fn load(&mut self, slot: u32) -> Result<[u8; 32], Infallible> {
            self.loads += 1;
            self.map.load(slot)
        }

        fn store(&mut self, slot: u32, value: [u8; 32]) -> Result<(), Infallible> {
            self.stores += 1;
            self.map.store(slot, value)
        }

        fn step(&mut self, _units: u64) -> Result<(), Infallible> {
            Ok(())
        }
    }

    fn nonce() -> Nonce32 {
        Nonce32([5u8; 32])
    }

    fn compile_one(text: &str) -> CompiledPolicy {
        let policy = parse_policy(text).unwrap();
        compile_mechanism(&policy.mechanisms()[0], &nonce(), DefaultDecision::Deny).unwrap()
    }

    #[test]
    fn within_state_touches_at_most_two_slots_per_event() {
        let compiled = compile_one(
            r#"
mechanism w {
  on tentative probe()
  if within(30, actual ping())
  then allow
}
"#,
        );
        let mut store = CountingStore::new();
        {
            let mut cache = SlotCache::new(&mut store);
            compiled.init_storage(&mut cache).unwrap();
            cache.flush().unwrap();
        }
        store.stores = 0;
        let ping = obfuscate_event(&Event::new("ping", [] as [(&str, &str); 0]), &nonce());
        let mut last_tick = 0;
        for tick in [3u64, 9, 10, 40] {
            let mut cache = SlotCache::new(&mut store);
            compiled.advance(&mut cache, last_tick, tick).unwrap();
            compiled.record(&mut cache, &ping, tick).unwrap();
            assert!(cache.dirty_count() <= 2, "event dirtied {} slots", cache.dirty_count());
            cache.flush().unwrap();
            last_tick = tick;
        }
        assert!(store.stores <= 8);
    }

    #[test]
    fn ring_buffer_invariants_hold_under_random_traffic() {
        let compiled = compile_one(
            r#"
mechanism c {
  on tentative probe()
  if atmost(2, 13, actual ping())
  then allow
}
"#,
        );
        let count = match &compiled.mechanisms[0].condition {
            CompiledNode::Count(c) => c.clone(),
            other => panic!("expected count node, got {other:?}"),
        };
        let mut store: BTreeMap<u32, [u8; 32]> = BTreeMap::new();
        {
            let mut cache = SlotCache::new(&mut store);
            compiled.init_storage(&mut cache).unwrap();
            cache.flush().unwrap();
        }
        let ping = obfuscate_event(&Event::new("ping", [] as [(&str, &str); 0]), &nonce());

        // Pseudo-random but fixed schedule of ticks, some repeated.
        let mut last_tick = 0u64;
        let mut tick = 0u64;
        for i in 0u64..200 {
            tick += (i * 7 + 3) % 5;
            let mut cache = SlotCache::new(&mut store);
            compiled.advance(&mut cache, last_tick, tick).unwrap();
            compiled.record(&mut cache, &ping, tick).unwrap();
            cache.flush().unwrap();
            last_tick = tick;

            let mut cache = SlotCache::new(&mut store);
            let running = cache.read_field(count.running).unwrap();
            let head = cache.read_field(count.head).unwrap();
            let mut sum = 0u64;
            for position in 0..count.window {
                sum += cache.read_field(count.bucket(position)).unwrap();
            }
            assert_eq!(running, sum, "running count must equal the bucket sum");
            assert_eq!(head, tick % count.window);
        }
    }

    #[test]
    fn canon_round_trip() {
        let policy = parse_policy(
            r#"
mechanism a {
  on tentative send(type = "x")
  if atmost(1, 9, actual send(type = "x")) and not within(4, actual pause())
  then modify(type = "y")
}

mechanism b {
  on tentative ping()
  then delay(5)
}
"#,
        )
        .unwrap();
        let mut alloc = LayoutAllocator::new();
        let compiled = compile_policy(
            &policy.mechanisms(),
            &nonce(),
            DefaultDecision::Allow,
            &mut alloc,
        )
        .unwrap();
        let bytes = compiled.canon_bytes();
        assert_eq!(CompiledPolicy::from_canon_bytes(&bytes).unwrap(), compiled);
    }
}
