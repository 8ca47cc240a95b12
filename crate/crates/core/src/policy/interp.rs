//! Plaintext reference interpreter.
//!
//! Keeps the entire actual-event history and evaluates conditions by brute
//! force, arbitrarily nested. This is the semantic oracle: slow, simple,
//! and obviously faithful to the definitions in [`super::ast`]. The
//! storage-backed state machines produced by the compiler are tested for
//! decision equivalence against it.

use serde::{Deserialize, Serialize};

use super::ast::{
    ActionKind, ConditionNode, DefaultDecision, Event, Mechanism, SubstValue,
};
use super::PolicyError;

/// The outcome of evaluating a tentative event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub kind: ActionKind,
    /// Ticks to postpone by, when `kind` is `Delay`.
    pub delay_ticks: u64,
    /// Attribute replacements, when `kind` is `Modify`.
    pub substitutions: Vec<(String, String)>,
}

impl Decision {
    pub fn allow() -> Self {
        Decision {
            kind: ActionKind::Allow,
            delay_ticks: 0,
            substitutions: Vec::new(),
        }
    }

    pub fn deny() -> Self {
        Decision {
            kind: ActionKind::Deny,
            ..Decision::allow()
        }
    }

    /// Whether the event goes ahead (possibly modified) and is recorded.
    pub fn permits(&self) -> bool {
        matches!(self.kind, ActionKind::Allow | ActionKind::Modify)
    }

    /// Apply this decision's substitutions to an event.
    pub fn apply_to(&self, event: &Event) -> Event {
        let mut out = event.clone();
        for (name, value) in &self.substitutions {
            out.attrs.insert(name.clone(), value.clone());
        }
        out
    }
}

/// Reference policy evaluator over an unbounded history.
#[derive(Debug, Clone)]
pub struct Interpreter {
    mechanisms: Vec<Mechanism>,
    default: DefaultDecision,
    current_tick: u64,
    history: Vec<(u64, Event)>,
}

impl Interpreter {
    /// Build an interpreter for ground mechanisms. Mechanisms are
    /// revalidated so programmatically built trees get the same checks as
    /// parsed ones. Reserved external predicates pass validation here and
    /// fail at evaluation time instead.
    pub fn new(
        mechanisms: Vec<Mechanism>,
        default: DefaultDecision,
        start_tick: u64,
    ) -> Result<Self, PolicyError> {
        for m in &mechanisms {
            m.validate(false)?;
        }
        Ok(Interpreter {
            mechanisms,
            default,
            current_tick: start_tick,
            history: Vec::new(),
        })
    }

    pub fn current_tick(&self) -> u64 {
        self.current_tick
    }

    pub fn history(&self) -> &[(u64, Event)] {
        &self.history
    }

    fn check_tick(&self, tick: u64) -> Result<(), PolicyError> {
        if tick < self.current_tick {
            return Err(PolicyError::StaleTick {
                tick,
                current: self.current_tick,
            });
        }
        Ok(())
    }

    /// Decide a tentative event without changing any state.
    pub fn probe(&self, event: &Event, tick: u64) -> Result<Decision, PolicyError> {
        self.check_tick(tick)?;
        Ok(self
            .first_match(event, tick)?
            .unwrap_or_else(|| match self.default {
                DefaultDecision::Allow => Decision::allow(),
                DefaultDecision::Deny => Decision::deny(),
            }))
    }

    /// The decision of the first mechanism whose trigger matches and whose
    /// condition holds, or `None` when no mechanism fires. Used for
    /// obligation checks, where silence is not a denial.
    pub fn first_match(
        &self,
        event: &Event,
        tick: u64,
    ) -> Result<Option<Decision>, PolicyError> {
        self.check_tick(tick)?;
        for m in &self.mechanisms {
            if !m.trigger.matches(event) {
                continue;
            }
            if self.eval(&m.condition, tick)? {
                let substitutions = m
                    .action
                    .substitutions
                    .iter()
                    .map(|(name, value)| match value {
                        SubstValue::Literal(v) => (name.clone(), v.clone()),
                        // Unreachable after ground validation.
                        SubstValue::Var(v) => (name.clone(), format!("${v}")),
                    })
                    .collect();
                return Ok(Some(Decision {
                    kind: m.action.kind,
                    delay_ticks: m.action.delay_ticks,
                    substitutions,
                }));
            }
        }
        Ok(None)
    }

    /// Append an actual event and advance the clock.
    pub fn record_actual(&mut self, event: &Event, tick: u64) -> Result<(), PolicyError> {
        self.check_tick(tick)?;
        self.history.push((tick, event.clone()));
        self.current_tick = tick;
        Ok(())
    }

    /// Advance the clock without recording anything.
    pub fn advance(&mut self, tick: u64) -> Result<(), PolicyError> {
        self.check_tick(tick)?;
        self.current_tick = tick;
        Ok(())
    }

    /// The full tentative-event protocol: decide, then record the event as
    /// actual only when it is permitted. Denied and delayed events leave the
    /// history and the clock untouched, so they do not consume budgets.
    pub fn notify(&mut self, event: &Event, tick: u64) -> Result<Decision, PolicyError> {
        let decision = self.probe(event, tick)?;
        if decision.permits() {
            let performed = decision.apply_to(event);
            self.record_actual(&performed, tick)?;
        }
        Ok(decision)
    }

    fn eval(&self, condition: &ConditionNode, tick: u64) -> Result<bool, PolicyError> {
        match condition {
            ConditionNode::Always => Ok(true),
            ConditionNode::EventMatch(pattern) => Ok(self
                .history
                .iter()
                .any(|(t, e)| *t == tick && pattern.matches(e))),
            ConditionNode::Not(child) => Ok(!self.eval(child, tick)?),
            ConditionNode::And(terms) => {
                for term in terms {
                    if !self.eval(term, tick)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            ConditionNode::Or(terms) => {
                for term in terms {
                    if self.eval(term, tick)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            ConditionNode::Within { window, child } => {
                let start = tick.saturating_sub(window - 1);
                for t in start..=tick {
                    if self.eval(child, t)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            ConditionNode::AtMost {
                limit,
                window,
                pattern,
            } => {
                let start = tick.saturating_sub(window - 1);
                let count = self
                    .history
                    .iter()
                    .filter(|(t, e)| *t >= start && *t <= tick && pattern.matches(e))
                    .count() as u64;
                Ok(count <= *limit)
            }
            ConditionNode::External { kind, .. } => Err(PolicyError::UnsupportedOperator {
                operator: kind.keyword().into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::ast::{EnforcementAction, EventPattern, Phase};
    use super::super::parse::parse_policy;
    use super::*;

    fn billing_interpreter() -> Interpreter {
        let policy = parse_policy(
            r#"
mechanism billingBudget {
  on tentative sendMessage(type = "billing")
  if atmost(0, 30, actual sendMessage(type = "billing"))
  then allow
}
"#,
        )
        .unwrap();
        Interpreter::new(policy.mechanisms(), DefaultDecision::Deny, 0).unwrap()
    }

    fn billing_event() -> Event {
        Event::new("sendMessage", [("type", "billing"), ("to", "a@example.org")])
    }

    #[test]
    fn billing_budget_over_time() {
        let mut interp = billing_interpreter();
        let e = billing_event();
        assert_eq!(interp.notify(&e, 0).unwrap().kind, ActionKind::Allow);
        assert_eq!(interp.notify(&e, 10).unwrap().kind, ActionKind::Deny);
        assert_eq!(interp.notify(&e, 31).unwrap().kind, ActionKind::Allow);
    }

    #[test]
    fn denied_events_do_not_consume_budget() {
        let mut interp = billing_interpreter();
        let e = billing_event();
        assert_eq!(interp.notify(&e, 0).unwrap().kind, ActionKind::Allow);
        // Three denials in a row leave the history untouched...
        for tick in [5, 10, 15] {
            assert_eq!(interp.notify(&e, tick).unwrap().kind, ActionKind::Deny);
        }
        assert_eq!(interp.history().len(), 1);
        // ...so the budget frees up exactly when the tick-0 event leaves
        // the window [t-29, t].
        assert_eq!(interp.notify(&e, 29).unwrap().kind, ActionKind::Deny);
        assert_eq!(interp.notify(&e, 30).unwrap().kind, ActionKind::Allow);
    }

    #[test]
    fn unmatched_events_get_the_default() {
        let interp = billing_interpreter();
        let ads = Event::new("sendMessage", [("type", "ads")]);
        assert_eq!(interp.probe(&ads, 0).unwrap().kind, ActionKind::Deny);
        assert_eq!(interp.first_match(&ads, 0).unwrap(), None);

        let allow_default = Interpreter::new(vec![], DefaultDecision::Allow, 0).unwrap();
        assert_eq!(
            allow_default.probe(&ads, 0).unwrap().kind,
            ActionKind::Allow
        );
    }

    #[test]
    fn time_travel_is_rejected() {
        let mut interp = billing_interpreter();
        interp.advance(10).unwrap();
        let e = billing_event();
        assert_eq!(
            interp.probe(&e, 9).unwrap_err(),
            PolicyError::StaleTick {
                tick: 9,
                current: 10
            }
        );
        assert!(interp.record_actual(&e, 3).is_err());
        // Probing at the current tick is fine and does not advance it.
        interp.probe(&e, 10).unwrap();
        assert_eq!(interp.current_tick(), 10);
    }

    #[test]
    fn within_looks_back_inclusive() {
        let policy = parse_policy(
            r#"
mechanism recentLogin {
  on tentative export()
  if within(3, actual login())
  then allow
}
"#,
        )
        .unwrap();
        let mut interp =
            Interpreter::new(policy.mechanisms(), DefaultDecision::Deny, 0).unwrap();
        interp
            .record_actual(&Event::new("login", [] as [(&str, &str); 0]), 5)
            .unwrap();
        let export = Event::new("export", [] as [(&str, &str); 0]);
        // Window [t-2, t]: ticks 5, 6, 7 see the login; tick 8 does not.
        for tick in [5, 6, 7] {
            assert_eq!(
                interp.probe(&export, tick).unwrap().kind,
                ActionKind::Allow,
                "tick {tick}"
            );
        }
        assert_eq!(interp.probe(&export, 8).unwrap().kind, ActionKind::Deny);
    }

    #[test]
    fn bare_event_match_means_same_tick() {
        let policy = parse_policy(
            r#"
mechanism sameTick {
  on tentative export()
  if happened(actual login())
  then allow
}
"#,
        )
        .unwrap();
        let mut interp =
            Interpreter::new(policy.mechanisms(), DefaultDecision::Deny, 0).unwrap();
        interp
            .record_actual(&Event::new("login", [] as [(&str, &str); 0]), 4)
            .unwrap();
        let export = Event::new("export", [] as [(&str, &str); 0]);
        assert_eq!(interp.probe(&export, 4).unwrap().kind, ActionKind::Allow);
        assert_eq!(interp.probe(&export, 5).unwrap().kind, ActionKind::Deny);
    }

    #[test]
    fn modify_records_the_substituted_event() {
        let policy = parse_policy(
            r#"
mechanism anonymize {
  on tentative forward(purpose = "analytics")
  then modify(subject = "pseudonym-1")
}
"#,
        )
        .unwrap();
        let mut interp =
            Interpreter::new(policy.mechanisms(), DefaultDecision::Deny, 0).unwrap();
        let e = Event::new("forward", [("purpose", "analytics"), ("subject", "alice")]);
        let d = interp.notify(&e, 2).unwrap();
        assert_eq!(d.kind, ActionKind::Modify);
        assert_eq!(
            d.substitutions,
            vec![("subject".to_string(), "pseudonym-1".to_string())]
        );
        let (tick, recorded) = &interp.history()[0];
        assert_eq!(*tick, 2);
        assert_eq!(recorded.attrs["subject"], "pseudonym-1");
        assert_eq!(recorded.attrs["purpose"], "analytics");
    }

    #[test]
    fn first_matching_mechanism_wins() {
        let policy = parse_policy(
            r#"
mechanism specific {
  on tentative send(type = "billing")
  then deny
}

mechanism broad {
  on tentative send()
  then allow
}
"#,
        )
        .unwrap();
        let interp = Interpreter::new(policy.mechanisms(), DefaultDecision::Deny, 0).unwrap();
        let billing = Event::new("send", [("type", "billing")]);
        let other = Event::new("send", [("type", "ads")]);
        assert_eq!(interp.probe(&billing, 0).unwrap().kind, ActionKind::Deny);
        assert_eq!(interp.probe(&other, 0).unwrap().kind, ActionKind::Allow);
    }

    #[test]
    fn external_predicates_error_at_evaluation() {
        let policy = parse_policy(
            r#"
mechanism trusted {
  on tentative export()
  if trust(high)
  then allow
}
"#,
        )
        .unwrap();
        let interp = Interpreter::new(policy.mechanisms(), DefaultDecision::Deny, 0).unwrap();
        let err = interp
            .probe(&Event::new("export", [] as [(&str, &str); 0]), 0)
            .unwrap_err();
        assert_eq!(
            err,
            PolicyError::UnsupportedOperator {
                operator: "trust".into()
            }
        );
        // A non-matching event never evaluates the condition.
        assert!(interp
            .probe(&Event::new("other", [] as [(&str, &str); 0]), 0)
            .is_ok());
    }

    #[test]
    fn delay_decision_carries_ticks_and_records_nothing() {
        let mechanisms = vec![Mechanism {
            name: "later".into(),
            trigger: EventPattern::new(Phase::Tentative, "export", vec![]).unwrap(),
            condition: ConditionNode::Always,
            action: EnforcementAction::delay(4),
            granularity: None,
        }];
        let mut interp = Interpreter::new(mechanisms, DefaultDecision::Deny, 0).unwrap();
        let e = Event::new("export", [] as [(&str, &str); 0]);
        let d = interp.notify(&e, 1).unwrap();
        assert_eq!(d.kind, ActionKind::Delay);
        assert_eq!(d.delay_ticks, 4);
        assert!(interp.history().is_empty());
    }

    #[test]
    fn wildcard_patterns_require_presence() {
        let policy = parse_policy(
            r#"
mechanism targeted {
  on tentative send(to = *)
  then allow
}
"#,
        )
        .unwrap();
        let interp = Interpreter::new(policy.mechanisms(), DefaultDecision::Deny, 0).unwrap();
        let with_to = Event::new("send", [("to", "x@example.org")]);
        let without = Event::new("send", [] as [(&str, &str); 0]);
        assert_eq!(interp.probe(&with_to, 0).unwrap().kind, ActionKind::Allow);
        assert_eq!(interp.probe(&without, 0).unwrap().kind, ActionKind::Deny);
    }

    #[test]
    fn window_reentry_after_expiry() {
        // Property spelled out: an event inside the window makes within true;
        // strictly after window ticks it turns false again.
        let policy = parse_policy(
            r#"
mechanism w {
  on tentative probe()
  if within(10, actual ping())
  then allow
}
"#,
        )
        .unwrap();
        let mut interp =
            Interpreter::new(policy.mechanisms(), DefaultDecision::Deny, 0).unwrap();
        interp
            .record_actual(&Event::new("ping", [] as [(&str, &str); 0]), 100)
            .unwrap();
        let probe = Event::new("probe", [] as [(&str, &str); 0]);
        assert_eq!(interp.probe(&probe, 109).unwrap().kind, ActionKind::Allow);
        assert_eq!(interp.probe(&probe, 110).unwrap().kind, ActionKind::Deny);
    }
}
