//! Conformance harness: compiled policies versus the reference interpreter.
//!
//! Generates random compilable policies and event traces, runs each trace
//! through the plaintext interpreter and through the compiled machine over
//! map-backed storage, and demands identical decisions at every step. Used
//! by the test suite; exported so integration tests and the acceptance
//! gate can run large suites without duplicating the wiring.

use std::collections::BTreeMap;
use std::fmt;

use rand_core::RngCore;

use crate::compiler::{
    compile_policy, obfuscate_event, LayoutAllocator, SlotCache,
};
use crate::crypto::Nonce32;
use crate::policy::{
    ActionKind, ConditionNode, Decision, DefaultDecision, EnforcementAction, Event,
    EventPattern, Interpreter, Mechanism, Phase, Policy, PolicyItem, SubstValue, ValueMatcher,
};

/// One input to both evaluators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceStep {
    /// Tentative event at a tick: decide, record when permitted.
    Notify { event: Event, tick: u64 },
    /// Pure passage of time.
    TimeStep { tick: u64 },
}

/// A decision disagreement, with everything needed to reproduce it.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub step_index: usize,
    pub policy_text: String,
    pub trace: Vec<TraceStep>,
    pub oracle: Decision,
    pub compiled_kind: ActionKind,
    pub detail: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "decision divergence at step {}: oracle {:?}, compiled {:?} ({})",
            self.step_index, self.oracle.kind, self.compiled_kind, self.detail
        )?;
        writeln!(f, "policy:\n{}", self.policy_text)?;
        writeln!(f, "trace:")?;
        for (i, step) in self.trace.iter().enumerate() {
            let marker = if i == self.step_index { " <-- here" } else { "" };
            writeln!(f, "  {i}: {step:?}{marker}")?;
        }
        Ok(())
    }
}

fn pick(rng: &mut impl RngCore, bound: usize) -> usize {
    (rng.next_u64() % bound as u64) as usize
}

const ACTIVITIES: [&str; 3] = ["ping", "send", "sync"];
const ATTRS: [&str; 2] = ["kind", "target"];
const VALUES: [&str; 3] = ["x", "y", "z"];

fn random_pattern(rng: &mut impl RngCore, phase: Phase) -> EventPattern {
    let activity = ACTIVITIES[pick(rng, ACTIVITIES.len())];
    let mut attrs = Vec::new();
    for attr in ATTRS {
        match pick(rng, 4) {
            0 => attrs.push((
                attr.to_string(),
                ValueMatcher::Equals(VALUES[pick(rng, VALUES.len())].to_string()),
            )),
            1 => attrs.push((attr.to_string(), ValueMatcher::Any)),
            _ => {}
        }
    }
    EventPattern::new(phase, activity, attrs).unwrap()
}

fn random_condition(rng: &mut impl RngCore, depth: usize) -> ConditionNode {
    let leafy = depth == 0 || pick(rng, 3) == 0;
    if leafy {
        match pick(rng, 3) {
            0 => ConditionNode::EventMatch(random_pattern(rng, Phase::Actual)),
            1 => ConditionNode::Within {
                window: 1 + pick(rng, 8) as u64,
                child: Box::new(ConditionNode::EventMatch(random_pattern(
                    rng,
                    Phase::Actual,
                ))),
            },
            _ => ConditionNode::AtMost {
                limit: pick(rng, 3) as u64,
                window: 1 + pick(rng, 9) as u64,
                pattern: random_pattern(rng, Phase::Actual),
            },
        }
    } else {
        match pick(rng, 3) {
            0 => ConditionNode::Not(Box::new(random_condition(rng, depth - 1))),
            1 => ConditionNode::And(vec![
                random_condition(rng, depth - 1),
                random_condition(rng, depth - 1),
            ]),
            _ => ConditionNode::Or(vec![
                random_condition(rng, depth - 1),
                random_condition(rng, depth - 1),
            ]),
        }
    }
}

fn random_action(rng: &mut impl RngCore) -> EnforcementAction {
    match pick(rng, 5) {
        0 | 1 => EnforcementAction::allow(),
        2 => EnforcementAction::deny(),
        3 => EnforcementAction::modify(vec![(
            ATTRS[pick(rng, ATTRS.len())].to_string(),
            SubstValue::Literal(VALUES[pick(rng, VALUES.len())].to_string()),
        )]),
        _ => EnforcementAction::delay(1 + pick(rng, 6) as u64),
    }
}

/// Generate `count` random ground mechanisms from the compilable fragment.
pub fn random_mechanisms(rng: &mut impl RngCore, count: usize) -> Vec<Mechanism> {
    (0..count)
        .map(|i| Mechanism {
            name: format!("m{i}"),
            trigger: random_pattern(rng, Phase::Tentative),
            condition: if pick(rng, 6) == 0 {
                ConditionNode::Always
            } else {
                random_condition(rng, 2)
            },
            action: random_action(rng),
            granularity: None,
        })
        .collect()
}

fn random_event(rng: &mut impl RngCore) -> Event {
    let activity = ACTIVITIES[pick(rng, ACTIVITIES.len())];
    let mut attrs: Vec<(String, String)> = Vec::new();
    for attr in ATTRS {
        if pick(rng, 3) < 2 {
            attrs.push((
                attr.to_string(),
                VALUES[pick(rng, VALUES.len())].to_string(),
            ));
        }
    }
    Event::new(activity, attrs)
}

/// Generate a trace of `steps` inputs at nondecreasing ticks, mixing
/// same-tick bursts, small advances, and window-clearing jumps.
pub fn random_trace(rng: &mut impl RngCore, steps: usize) -> Vec<TraceStep> {
    let mut tick = 0u64;
    (0..steps)
        .map(|_| {
            tick += match pick(rng, 6) {
                0 => 0,
                1 | 2 => 1,
                3 => 2,
                4 => 4,
                _ => 11,
            };
            if pick(rng, 5) == 0 {
                TraceStep::TimeStep { tick }
            } else {
                TraceStep::Notify {
                    event: random_event(rng),
                    tick,
                }
            }
        })
        .collect()
}

/// The fixed two-event alphabet for exhaustive checks.
pub fn two_event_alphabet() -> [Event; 2] {
    [
        Event::new("ping", [("kind", "x")]),
        Event::new("send", [("kind", "y"), ("target", "x")]),
    ]
}

/// Every notify trace over [`two_event_alphabet`] of length 1..=`max_len`,
/// ticks advancing by one per step.
pub fn exhaustive_traces(max_len: usize) -> Vec<Vec<TraceStep>> {
    let alphabet = two_event_alphabet();
    let mut out = Vec::new();
    for len in 1..=max_len {
        let combos = 1usize << len;
        for bits in 0..combos {
            let trace = (0..len)
                .map(|i| TraceStep::Notify {
                    event: alphabet[(bits >> i) & 1].clone(),
                    tick: i as u64 + 1,
                })
                .collect();
            out.push(trace);
        }
    }
    out
}

/// Run one trace through both evaluators, comparing the decision at every
/// notify step. Returns the oracle decisions on success.
pub fn run_case(
    mechanisms: &[Mechanism],
    default: DefaultDecision,
    trace: &[TraceStep],
    nonce: &Nonce32,
) -> Result<Vec<Decision>, Box<Divergence>> {
    let mut oracle = Interpreter::new(mechanisms.to_vec(), default, 0)
        .expect("generated mechanisms must validate");
    let mut alloc = LayoutAllocator::new();
    // Reserve a byte so policy state does not start at slot 0 byte 0, the
    // way contract metadata does in deployed layouts.
    alloc.alloc(1);
    let compiled = compile_policy(mechanisms, nonce, default, &mut alloc)
        .expect("generated mechanisms must compile");

    let mut store: BTreeMap<u32, [u8; 32]> = BTreeMap::new();
    {
        let mut cache = SlotCache::new(&mut store);
        compiled.init_storage(&mut cache).unwrap();
        cache.flush().unwrap();
    }
    let mut last_tick = 0u64;
    let mut decisions = Vec::new();

    let diverge = |index: usize, oracle_d: &Decision, kind: ActionKind, detail: String| {
        Box::new(Divergence {
            step_index: index,
            policy_text: crate::policy::print_policy(&Policy {
                items: mechanisms
                    .iter()
                    .cloned()
                    .map(PolicyItem::Mechanism)
                    .collect(),
            }),
            trace: trace.to_vec(),
            oracle: oracle_d.clone(),
            compiled_kind: kind,
            detail,
        })
    };

    for (index, step) in trace.iter().enumerate() {
        match step {
            TraceStep::TimeStep { tick } => {
                oracle.advance(*tick).expect("trace ticks are nondecreasing");
                let mut cache = SlotCache::new(&mut store);
                compiled.advance(&mut cache, last_tick, *tick).unwrap();
                cache.flush().unwrap();
                last_tick = *tick;
            }
            TraceStep::Notify { event, tick } => {
                let oracle_decision =
                    oracle.notify(event, *tick).expect("trace ticks are valid");

                let obf_event = obfuscate_event(event, nonce);
                let mut cache = SlotCache::new(&mut store);
                let compiled_decision = compiled
                    .decide(&mut cache, &obf_event, *tick, last_tick)
                    .unwrap();
                if compiled_decision.permits() {
                    compiled.advance(&mut cache, last_tick, *tick).unwrap();
                    let performed = obf_event.substitute(&compiled_decision.substitutions);
                    compiled.record(&mut cache, &performed, *tick).unwrap();
                    last_tick = *tick;
                }
                cache.flush().unwrap();

                if compiled_decision.kind != oracle_decision.kind
                    || compiled_decision.delay_ticks != oracle_decision.delay_ticks
                {
                    return Err(diverge(
                        index,
                        &oracle_decision,
                        compiled_decision.kind,
                        format!(
                            "kind/delay mismatch (oracle delay {}, compiled delay {})",
                            oracle_decision.delay_ticks, compiled_decision.delay_ticks
                        ),
                    ));
                }
                let mut oracle_subs: Vec<_> = oracle_decision
                    .substitutions
                    .iter()
                    .map(|(name, value)| {
                        (
                            crate::compiler::attr_name_digest(name, nonce),
                            crate::compiler::attr_value_digest(name, value, nonce),
                        )
                    })
                    .collect();
                oracle_subs.sort();
                let mut compiled_subs = compiled_decision.substitutions.clone();
                compiled_subs.sort();
                if oracle_subs != compiled_subs {
                    return Err(diverge(
                        index,
                        &oracle_decision,
                        compiled_decision.kind,
                        "substitution digests differ".into(),
                    ));
                }
                decisions.push(oracle_decision);
            }
        }
    }
    Ok(decisions)
}
