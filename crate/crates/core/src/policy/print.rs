//! Canonical policy printer.
//!
//! Printing a parsed policy and reparsing the output yields the same tree,
//! and reprinting yields the same text. Attributes and substitutions are
//! already sorted in the tree, so the printed form is a canonical
//! representation of the policy.

use std::fmt::Write;

use super::ast::{
    ActionKind, ConditionNode, EnforcementAction, EventPattern, Mechanism, MechanismTemplate,
    Phase, Policy, PolicyItem, SubstValue, ValueMatcher, VarDomain,
};

pub fn print_policy(policy: &Policy) -> String {
    let mut out = String::new();
    for (i, item) in policy.items.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        match item {
            PolicyItem::Mechanism(m) => print_mechanism(&mut out, m, 0),
            PolicyItem::Template(t) => print_template(&mut out, t),
        }
    }
    out
}

fn print_mechanism(out: &mut String, m: &Mechanism, depth: usize) {
    let pad = "  ".repeat(depth);
    let _ = writeln!(out, "{pad}mechanism {} {{", m.name);
    let _ = writeln!(out, "{pad}  on {}", phased_pattern(&m.trigger));
    if m.condition != ConditionNode::Always {
        let _ = writeln!(out, "{pad}  if {}", condition(&m.condition, 0));
    }
    let _ = writeln!(out, "{pad}  then {}", action(&m.action));
    if let Some(g) = &m.granularity {
        let _ = writeln!(out, "{pad}  granularity {}", quote(g));
    }
    let _ = writeln!(out, "{pad}}}");
}

fn print_template(out: &mut String, t: &MechanismTemplate) {
    let vars = t
        .variables
        .iter()
        .map(|v| {
            let domain = match v.domain {
                VarDomain::Entity => "entity",
                VarDomain::Data => "data",
            };
            format!("{domain} {}", v.name)
        })
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(out, "template {}({vars}) {{", t.name);
    print_mechanism(out, &t.body, 1);
    let _ = writeln!(out, "  config on {}", phased_pattern(&t.config_rule));
    let _ = writeln!(out, "}}");
}

fn phased_pattern(p: &EventPattern) -> String {
    let phase = match p.phase {
        Phase::Tentative => "tentative",
        Phase::Actual => "actual",
    };
    format!("{phase} {}", pattern(p))
}

fn pattern(p: &EventPattern) -> String {
    let attrs = p
        .attrs
        .iter()
        .map(|(name, matcher)| {
            let value = match matcher {
                ValueMatcher::Equals(v) => quote(v),
                ValueMatcher::Any => "*".into(),
                ValueMatcher::Var(v) => format!("${v}"),
            };
            format!("{name} = {value}")
        })
        .collect::<Vec<_>>()
        .join(", ");
    format!("{}({attrs})", p.activity)
}

/// Precedence levels: 0 accepts `or`, 1 accepts `and`, 2 accepts only unary
/// and atoms. Children printed at a level their operator does not satisfy
/// are parenthesized.
fn condition(node: &ConditionNode, level: u8) -> String {
    match node {
        ConditionNode::Always => "always".into(),
        ConditionNode::EventMatch(p) => format!("happened({})", phased_pattern(p)),
        ConditionNode::Not(child) => format!("not {}", condition(child, 2)),
        ConditionNode::And(terms) => {
            let body = terms
                .iter()
                .map(|t| condition(t, 2))
                .collect::<Vec<_>>()
                .join(" and ");
            if level > 1 {
                format!("({body})")
            } else {
                body
            }
        }
        ConditionNode::Or(terms) => {
            let body = terms
                .iter()
                .map(|t| condition(t, 1))
                .collect::<Vec<_>>()
                .join(" or ");
            if level > 0 {
                format!("({body})")
            } else {
                body
            }
        }
        ConditionNode::Within { window, child } => match child.as_ref() {
            ConditionNode::EventMatch(p) => {
                format!("within({window}, {})", phased_pattern(p))
            }
            other => format!("within({window}, {})", condition(other, 0)),
        },
        ConditionNode::AtMost {
            limit,
            window,
            pattern: p,
        } => format!("atmost({limit}, {window}, {})", phased_pattern(p)),
        ConditionNode::External { kind, subject } => {
            format!("{}({subject})", kind.keyword())
        }
    }
}

fn action(a: &EnforcementAction) -> String {
    match a.kind {
        ActionKind::Allow => "allow".into(),
        ActionKind::Deny => "deny".into(),
        ActionKind::Modify => {
            let subs = a
                .substitutions
                .iter()
                .map(|(name, value)| match value {
                    SubstValue::Literal(v) => format!("{name} = {}", quote(v)),
                    SubstValue::Var(v) => format!("{name} = ${v}"),
                })
                .collect::<Vec<_>>()
                .join(", ");
            format!("modify({subs})")
        }
        ActionKind::Delay => format!("delay({})", a.delay_ticks),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_policy;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trips_a_policy_file() {
        let text = r#"
mechanism billingBudget {
  on tentative sendMessage(type = "billing", to = *)
  if atmost(0, 30, actual sendMessage(type = "billing"))
  then allow
  granularity "1 day"
}

mechanism guard {
  on tentative delete(target = "x\"y\\z")
  if not happened(actual withdraw()) and (within(7, actual login()) or trust(high))
  then modify(target = "redacted")
}

template billingPerUser(data email) {
  mechanism inner {
    on tentative sendMessage(to = $email)
    then delay(3)
  }
  config on actual subscribe(email = $email)
}
"#;
        let parsed = parse_policy(text).unwrap();
        let printed = print_policy(&parsed);
        let reparsed = parse_policy(&printed).unwrap();
        assert_eq!(parsed, reparsed);
        assert_eq!(printed, print_policy(&reparsed));
    }

    fn ident() -> impl Strategy<Value = String> {
        "[a-z][a-zA-Z0-9_]{0,7}"
    }

    fn text_value() -> impl Strategy<Value = String> {
        // Printable ASCII plus the escaped characters.
        "[ -~\n\t]{0,12}"
    }

    fn actual_pattern() -> impl Strategy<Value = EventPattern> {
        (
            ident(),
            proptest::collection::btree_map(
                ident(),
                prop_oneof![
                    text_value().prop_map(ValueMatcher::Equals),
                    Just(ValueMatcher::Any)
                ],
                0..3,
            ),
        )
            .prop_map(|(activity, attrs)| {
                EventPattern::new(Phase::Actual, activity, attrs.into_iter().collect()).unwrap()
            })
    }

    fn condition_tree() -> impl Strategy<Value = ConditionNode> {
        let leaf = prop_oneof![
            actual_pattern().prop_map(ConditionNode::EventMatch),
            (0u64..3, 1u64..40, actual_pattern()).prop_map(|(limit, window, pattern)| {
                ConditionNode::AtMost {
                    limit,
                    window,
                    pattern,
                }
            }),
            ident().prop_map(|subject| ConditionNode::External {
                kind: super::super::ast::ExternalKind::Trust,
                subject,
            }),
        ];
        leaf.prop_recursive(3, 24, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(|c| ConditionNode::Not(Box::new(c))),
                proptest::collection::vec(inner.clone(), 2..4).prop_map(ConditionNode::And),
                proptest::collection::vec(inner.clone(), 2..4).prop_map(ConditionNode::Or),
                (1u64..40, inner).prop_map(|(window, child)| ConditionNode::Within {
                    window,
                    child: Box::new(child),
                }),
            ]
        })
    }

    fn mechanism() -> impl Strategy<Value = Mechanism> {
        let action = prop_oneof![
            Just(EnforcementAction::allow()),
            Just(EnforcementAction::deny()),
            proptest::collection::btree_map(ident(), text_value(), 1..3).prop_map(|subs| {
                EnforcementAction::modify(
                    subs.into_iter()
                        .map(|(k, v)| (k, SubstValue::Literal(v)))
                        .collect(),
                )
            }),
            (1u64..20).prop_map(EnforcementAction::delay),
        ];
        (
            ident(),
            actual_pattern(),
            prop_oneof![Just(ConditionNode::Always), condition_tree()],
            action,
            proptest::option::of(text_value()),
        )
            .prop_map(|(name, mut trigger, condition, action, granularity)| {
                trigger.phase = Phase::Tentative;
                Mechanism {
                    name,
                    trigger,
                    condition,
                    action,
                    granularity,
                }
            })
    }

    proptest! {
        #[test]
        fn print_parse_is_identity(m in mechanism()) {
            prop_assume!(m.validate(false).is_ok());
            let policy = Policy { items: vec![PolicyItem::Mechanism(m)] };
            let printed = print_policy(&policy);
            let reparsed = parse_policy(&printed).unwrap_or_else(|e| {
                panic!("reparse failed: {e}\n---\n{printed}")
            });
            prop_assert_eq!(&policy, &reparsed);
            prop_assert_eq!(printed, print_policy(&reparsed));
        }
    }
}
