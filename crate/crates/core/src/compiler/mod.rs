//! Compilation of policy mechanisms into obfuscated, storage-backed state
//! machines.
//!
//! A compiled policy never contains an activity name, attribute name, or
//! attribute value in the clear: every identifier is replaced by a salted
//! SHA3-256 digest, so the on-chain form reveals only the policy's shape.
//! Temporal operators are compiled into constant-size storage state:
//!
//! - `within` (and bare event matches, which are one-tick windows) become a
//!   flag plus the tick of the last match,
//! - `atmost` becomes a ring buffer of per-tick match counts with a head
//!   index and a running total.
//!
//! Propositional structure (`not`, `and`, `or`) is kept as a tree over those
//! leaves. Temporal operators over anything other than an event pattern, and
//! the reserved external predicates, are rejected with errors naming the
//! offending operator; the reference interpreter remains the place to run
//! such policies off-chain.

mod layout;
mod machine;
mod obfuscate;

pub use layout::{FieldRef, LayoutAllocator};
pub use machine::{
    decision_kind_byte, decision_kind_from_byte, CompiledAction, CompiledDecision,
    CompiledMechanism, CompiledNode, CompiledPolicy, CountNode, MatchNode, PolicyStore, SlotCache,
};
pub use obfuscate::{
    activity_digest, attr_name_digest, attr_value_digest, match_obfuscated, obfuscate_event,
    obfuscate_pattern, ObfAttr, ObfEvent, ObfuscatedPattern,
};

use thiserror::Error;

use crate::crypto::Nonce32;
use crate::policy::{
    ActionKind, ConditionNode, DefaultDecision, Mechanism, PolicyError, SubstValue,
};

/// Longest `atmost` window the compiler accepts. Each window tick needs a
/// ring-buffer bucket, so the cap bounds the storage address range a single
/// policy can claim. `within` windows carry no such cost and are unbounded.
pub const MAX_COUNT_WINDOW: u64 = 1 << 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error("operator `{operator}` is not supported on-chain")]
    UnsupportedOperator { operator: String },
    #[error("`within` over {found} is not compilable; nest only event patterns")]
    UnsupportedShape { found: String },
    #[error("pattern contains uninstantiated variable `${variable}`")]
    UninstantiatedVariable { variable: String },
    #[error("atmost window of {window} ticks exceeds the compilable maximum of {max}")]
    WindowTooLarge { window: u64, max: u64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Compile ground mechanisms into one obfuscated policy machine. Node state
/// fields are allocated from `alloc`, which the caller may pre-seed with its
/// own fields so unrelated state packs into shared slots.
pub fn compile_policy(
    mechanisms: &[Mechanism],
    nonce: &Nonce32,
    default: DefaultDecision,
    alloc: &mut LayoutAllocator,
) -> Result<CompiledPolicy, CompileError> {
    let mut compiled = Vec::with_capacity(mechanisms.len());
    for m in mechanisms {
        m.validate(false)?;
        compiled.push(CompiledMechanism {
            trigger: obfuscate_pattern(&m.trigger, nonce)?,
            condition: compile_node(&m.condition, nonce, alloc)?,
            action: compile_action(m, nonce)?,
        });
    }
    Ok(CompiledPolicy {
        mechanisms: compiled,
        default,
        slots_used: alloc.slots_used(),
    })
}

/// Compile a single mechanism with a fresh layout.
pub fn compile_mechanism(
    mechanism: &Mechanism,
    nonce: &Nonce32,
    default: DefaultDecision,
) -> Result<CompiledPolicy, CompileError> {
    let mut alloc = LayoutAllocator::new();
    compile_policy(std::slice::from_ref(mechanism), nonce, default, &mut alloc)
}

fn compile_node(
    node: &ConditionNode,
    nonce: &Nonce32,
    alloc: &mut LayoutAllocator,
) -> Result<CompiledNode, CompileError> {
    match node {
        ConditionNode::Always => Ok(CompiledNode::Always),
        ConditionNode::EventMatch(p) => Ok(CompiledNode::Match(MatchNode {
            pattern: obfuscate_pattern(p, nonce)?,
            window: 1,
            flag: alloc.alloc(1),
            last_true: alloc.alloc(8),
        })),
        ConditionNode::Within { window, child } => {
            // Nested windows collapse: a match within m ticks of some tick in
            // an n-tick window is a match within n + m - 1 ticks.
            let mut total = *window;
            let mut inner = child.as_ref();
            loop {
                match inner {
                    ConditionNode::Within { window, child } => {
                        total = total + window - 1;
                        inner = child.as_ref();
                    }
                    ConditionNode::EventMatch(p) => {
                        return Ok(CompiledNode::Match(MatchNode {
                            pattern: obfuscate_pattern(p, nonce)?,
                            window: total,
                            flag: alloc.alloc(1),
                            last_true: alloc.alloc(8),
                        }));
                    }
                    other => {
                        return Err(CompileError::UnsupportedShape {
                            found: describe(other).into(),
                        })
                    }
                }
            }
        }
        ConditionNode::AtMost {
            limit,
            window,
            pattern,
        } => {
            // A zero budget is the negation of a window match, which needs
            // only a flag and a tick instead of a ring buffer.
            if *limit == 0 {
                return Ok(CompiledNode::Not(Box::new(CompiledNode::Match(
                    MatchNode {
                        pattern: obfuscate_pattern(pattern, nonce)?,
                        window: *window,
                        flag: alloc.alloc(1),
                        last_true: alloc.alloc(8),
                    },
                ))));
            }
            if *window > MAX_COUNT_WINDOW {
                return Err(CompileError::WindowTooLarge {
                    window: *window,
                    max: MAX_COUNT_WINDOW,
                });
            }
            let head = alloc.alloc(2);
            let running = alloc.alloc(4);
            let buckets_start = alloc.alloc_slots(window.div_ceil(8) as u32);
            Ok(CompiledNode::Count(CountNode {
                pattern: obfuscate_pattern(pattern, nonce)?,
                limit: *limit,
                window: *window,
                head,
                running,
                buckets_start,
            }))
        }
        ConditionNode::Not(child) => Ok(CompiledNode::Not(Box::new(compile_node(
            child, nonce, alloc,
        )?))),
        ConditionNode::And(terms) => Ok(CompiledNode::And(
            terms
                .iter()
                .map(|t| compile_node(t, nonce, alloc))
                .collect::<Result<_, _>>()?,
        )),
        ConditionNode::Or(terms) => Ok(CompiledNode::Or(
            terms
                .iter()
                .map(|t| compile_node(t, nonce, alloc))
                .collect::<Result<_, _>>()?,
        )),
        ConditionNode::External { kind, .. } => Err(CompileError::UnsupportedOperator {
            operator: kind.keyword().into(),
        }),
    }
}

fn describe(node: &ConditionNode) -> &'static str {
    match node {
        ConditionNode::Always => "`always`",
        ConditionNode::EventMatch(_) => "an event pattern",
        ConditionNode::Not(_) => "`not`",
        ConditionNode::And(_) => "`and`",
        ConditionNode::Or(_) => "`or`",
        ConditionNode::Within { .. } => "`within`",
        ConditionNode::AtMost { .. } => "`atmost`",
        ConditionNode::External { kind, .. } => match kind {
            crate::policy::ExternalKind::Trust => "`trust`",
            crate::policy::ExternalKind::Context => "`context`",
            crate::policy::ExternalKind::Role => "`role`",
        },
    }
}

fn compile_action(m: &Mechanism, nonce: &Nonce32) -> Result<CompiledAction, CompileError> {
    let mut substitutions = Vec::with_capacity(m.action.substitutions.len());
    for (name, value) in &m.action.substitutions {
        let literal = match value {
            SubstValue::Literal(v) => v,
            SubstValue::Var(v) => {
                return Err(CompileError::UninstantiatedVariable {
                    variable: v.clone(),
                })
            }
        };
        substitutions.push((
            attr_name_digest(name, nonce),
            attr_value_digest(name, literal, nonce),
        ));
    }
    Ok(CompiledAction {
        kind: m.action.kind,
        delay_ticks: m.action.delay_ticks,
        substitutions,
    })
}

/// Decision kind of the default, as a [`CompiledDecision`].
pub fn default_decision(default: DefaultDecision) -> CompiledDecision {
    CompiledDecision {
        kind: match default {
            DefaultDecision::Allow => ActionKind::Allow,
            DefaultDecision::Deny => ActionKind::Deny,
        },
        delay_ticks: 0,
        substitutions: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::parse_policy;

    fn nonce() -> Nonce32 {
        Nonce32([7u8; 32])
    }

    fn compile_text(text: &str) -> Result<CompiledPolicy, CompileError> {
        let policy = parse_policy(text).unwrap();
        let mut alloc = LayoutAllocator::new();
        compile_policy(
            &policy.mechanisms(),
            &nonce(),
            DefaultDecision::Deny,
            &mut alloc,
        )
    }

    #[test]
    fn compiles_the_billing_mechanism() {
        let compiled = compile_text(
            r#"
mechanism billingBudget {
  on tentative sendMessage(type = "billing")
  if atmost(0, 30, actual sendMessage(type = "billing"))
  then allow
}
"#,
        )
        .unwrap();
        assert_eq!(compiled.mechanisms.len(), 1);
        // A zero budget compiles to the negation of a window match.
        match &compiled.mechanisms[0].condition {
            CompiledNode::Not(child) => match child.as_ref() {
                CompiledNode::Match(m) => assert_eq!(m.window, 30),
                other => panic!("unexpected node {other:?}"),
            },
            other => panic!("unexpected node {other:?}"),
        }
    }

    #[test]
    fn positive_budgets_compile_to_ring_buffers() {
        let compiled = compile_text(
            r#"
mechanism c {
  on tentative probe()
  if atmost(2, 13, actual ping())
  then allow
}
"#,
        )
        .unwrap();
        match &compiled.mechanisms[0].condition {
            CompiledNode::Count(c) => {
                assert_eq!(c.limit, 2);
                assert_eq!(c.window, 13);
                assert_eq!(compiled.slots_used, 1 + 13u32.div_ceil(8));
            }
            other => panic!("unexpected node {other:?}"),
        }
    }

    #[test]
    fn nested_withins_collapse() {
        let compiled = compile_text(
            r#"
mechanism w {
  on tentative probe()
  if within(10, within(5, actual ping()))
  then allow
}
"#,
        )
        .unwrap();
        match &compiled.mechanisms[0].condition {
            CompiledNode::Match(m) => assert_eq!(m.window, 14),
            other => panic!("unexpected node {other:?}"),
        }
    }

    #[test]
    fn within_over_boolean_structure_is_rejected_by_name() {
        let err = compile_text(
            r#"
mechanism w {
  on tentative probe()
  if within(10, happened(actual a()) and happened(actual b()))
  then allow
}
"#,
        )
        .unwrap_err();
        assert_eq!(
            err,
            CompileError::UnsupportedShape {
                found: "`and`".into()
            }
        );
    }

    #[test]
    fn external_predicates_are_rejected_by_name() {
        let err = compile_text(
            r#"
mechanism t {
  on tentative probe()
  if trust(high)
  then allow
}
"#,
        )
        .unwrap_err();
        assert_eq!(
            err,
            CompileError::UnsupportedOperator {
                operator: "trust".into()
            }
        );
    }

    #[test]
    fn uninstantiated_templates_cannot_compile() {
        let policy = parse_policy(
            r#"
template t(data email) {
  mechanism m {
    on tentative send(to = $email)
    then allow
  }
  config on actual subscribe(email = $email)
}
"#,
        )
        .unwrap();
        let err =
            compile_mechanism(&policy.templates()[0].body, &nonce(), DefaultDecision::Deny)
                .unwrap_err();
        assert!(matches!(err, CompileError::Policy(_)), "{err:?}");
    }

    #[test]
    fn oversized_count_windows_are_rejected() {
        let err = compile_text(
            r#"
mechanism c {
  on tentative probe()
  if atmost(1, 2000000, actual ping())
  then allow
}
"#,
        )
        .unwrap_err();
        assert!(matches!(err, CompileError::WindowTooLarge { .. }));
    }

    #[test]
    fn compiled_output_contains_no_plaintext() {
        let compiled = compile_text(
            r#"
mechanism billingBudget {
  on tentative sendMessage(type = "billing", to = *)
  if atmost(0, 30, actual sendMessage(type = "billing"))
  then modify(to = "auditor@example.org")
}
"#,
        )
        .unwrap();
        let json = serde_json::to_string(&compiled).unwrap();
        for secret in [
            "billingBudget",
            "sendMessage",
            "billing",
            "type",
            "to",
            "auditor",
            "example.org",
        ] {
            assert!(
                !json.contains(secret),
                "compiled policy leaks `{secret}`: {json}"
            );
        }
    }
}
