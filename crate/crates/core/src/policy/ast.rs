//! Policy abstract syntax and static validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::PolicyError;

/// Whether a pattern talks about an intended event or a performed one.
/// Triggers are always tentative; condition patterns always refer to actual
/// history. The phase is a static marker checked during validation, not
/// consulted during matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Phase {
    Tentative,
    Actual,
}

/// Constraint on one event attribute.
///
/// `Any` requires the attribute to be present with some value; `Equals`
/// requires an exact value; `Var` is a template placeholder and never
/// matches until instantiated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ValueMatcher {
    Equals(String),
    Any,
    Var(String),
}

/// A named activity plus attribute constraints. Attributes are kept sorted
/// by name and unique, so structurally equal patterns are representationally
/// equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventPattern {
    pub phase: Phase,
    pub activity: String,
    pub attrs: Vec<(String, ValueMatcher)>,
}

impl EventPattern {
    pub fn new(
        phase: Phase,
        activity: impl Into<String>,
        mut attrs: Vec<(String, ValueMatcher)>,
    ) -> Result<Self, PolicyError> {
        let activity = activity.into();
        attrs.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in attrs.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(PolicyError::semantic(
                    format!("pattern {activity}"),
                    format!("duplicate attribute `{}`", pair[0].0),
                ));
            }
        }
        Ok(EventPattern {
            phase,
            activity,
            attrs,
        })
    }

    /// Plaintext matching. The reference semantics mirrored by the
    /// obfuscated matcher in the compiler.
    pub fn matches(&self, event: &Event) -> bool {
        if self.activity != event.activity {
            return false;
        }
        self.attrs.iter().all(|(name, matcher)| match matcher {
            ValueMatcher::Equals(v) => event.attrs.get(name) == Some(v),
            ValueMatcher::Any => event.attrs.contains_key(name),
            ValueMatcher::Var(_) => false,
        })
    }

    fn vars(&self, out: &mut BTreeSet<String>) {
        for (_, matcher) in &self.attrs {
            if let ValueMatcher::Var(v) = matcher {
                out.insert(v.clone());
            }
        }
    }
}

/// A concrete event: activity name plus attribute values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub activity: String,
    pub attrs: BTreeMap<String, String>,
}

impl Event {
    pub fn new<A, K, V>(activity: A, attrs: impl IntoIterator<Item = (K, V)>) -> Self
    where
        A: Into<String>,
        K: Into<String>,
        V: Into<String>,
    {
        Event {
            activity: activity.into(),
            attrs: attrs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }
}

/// Reserved external predicates: recognized by the grammar so policies using
/// them round-trip, but rejected by both evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ExternalKind {
    Trust,
    Context,
    Role,
}

impl ExternalKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            ExternalKind::Trust => "trust",
            ExternalKind::Context => "context",
            ExternalKind::Role => "role",
        }
    }
}

/// Condition over the actual-event history, evaluated at a probe tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ConditionNode {
    /// No condition: always true.
    Always,
    /// The pattern matched an actual event at the probe tick itself.
    /// Equivalent to `Within { window: 1 }`.
    EventMatch(EventPattern),
    Not(Box<ConditionNode>),
    And(Vec<ConditionNode>),
    Or(Vec<ConditionNode>),
    /// The child held at some tick in the trailing window
    /// `[tick - window + 1, tick]`.
    Within { window: u64, child: Box<ConditionNode> },
    /// At most `limit` actual events matching `pattern` occurred in the
    /// trailing window. The tentative event under evaluation is never
    /// counted; only recorded history is.
    AtMost {
        limit: u64,
        window: u64,
        pattern: EventPattern,
    },
    /// Reserved predicate evaluated by neither the interpreter nor the
    /// compiler.
    External { kind: ExternalKind, subject: String },
}

impl ConditionNode {
    fn validate(&self, scope: &str) -> Result<(), PolicyError> {
        match self {
            ConditionNode::Always | ConditionNode::External { .. } => Ok(()),
            ConditionNode::EventMatch(p) => check_actual(scope, p),
            ConditionNode::Not(c) => c.validate(scope),
            ConditionNode::And(cs) | ConditionNode::Or(cs) => {
                cs.iter().try_for_each(|c| c.validate(scope))
            }
            ConditionNode::Within { window, child } => {
                if *window == 0 {
                    return Err(PolicyError::semantic(
                        scope,
                        "within window must be at least one tick",
                    ));
                }
                child.validate(scope)
            }
            ConditionNode::AtMost {
                window, pattern, ..
            } => {
                if *window == 0 {
                    return Err(PolicyError::semantic(
                        scope,
                        "atmost window must be at least one tick",
                    ));
                }
                check_actual(scope, pattern)
            }
        }
    }

    fn vars(&self, out: &mut BTreeSet<String>) {
        match self {
            ConditionNode::Always | ConditionNode::External { .. } => {}
            ConditionNode::EventMatch(p) => p.vars(out),
            ConditionNode::Not(c) => c.vars(out),
            ConditionNode::And(cs) | ConditionNode::Or(cs) => {
                cs.iter().for_each(|c| c.vars(out))
            }
            ConditionNode::Within { child, .. } => child.vars(out),
            ConditionNode::AtMost { pattern, .. } => pattern.vars(out),
        }
    }

    fn substitute(&mut self, bindings: &BTreeMap<String, String>) {
        match self {
            ConditionNode::Always | ConditionNode::External { .. } => {}
            ConditionNode::EventMatch(p) => substitute_pattern(p, bindings),
            ConditionNode::Not(c) => c.substitute(bindings),
            ConditionNode::And(cs) | ConditionNode::Or(cs) => {
                cs.iter_mut().for_each(|c| c.substitute(bindings))
            }
            ConditionNode::Within { child, .. } => child.substitute(bindings),
            ConditionNode::AtMost { pattern, .. } => substitute_pattern(pattern, bindings),
        }
    }
}

fn check_actual(scope: &str, pattern: &EventPattern) -> Result<(), PolicyError> {
    if pattern.phase != Phase::Actual {
        return Err(PolicyError::semantic(
            scope,
            format!(
                "condition pattern `{}` must refer to actual events",
                pattern.activity
            ),
        ));
    }
    Ok(())
}

fn substitute_pattern(pattern: &mut EventPattern, bindings: &BTreeMap<String, String>) {
    for (_, matcher) in &mut pattern.attrs {
        if let ValueMatcher::Var(v) = matcher {
            if let Some(value) = bindings.get(v) {
                *matcher = ValueMatcher::Equals(value.clone());
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ActionKind {
    Allow,
    Deny,
    Modify,
    Delay,
}

/// Replacement value in a modify action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SubstValue {
    Literal(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnforcementAction {
    pub kind: ActionKind,
    /// Attribute substitutions applied when `kind` is `Modify`, sorted by
    /// attribute name.
    pub substitutions: Vec<(String, SubstValue)>,
    /// Ticks to postpone the event by when `kind` is `Delay`.
    pub delay_ticks: u64,
}

impl EnforcementAction {
    pub fn allow() -> Self {
        EnforcementAction {
            kind: ActionKind::Allow,
            substitutions: Vec::new(),
            delay_ticks: 0,
        }
    }

    pub fn deny() -> Self {
        EnforcementAction {
            kind: ActionKind::Deny,
            ..EnforcementAction::allow()
        }
    }

    pub fn modify(mut substitutions: Vec<(String, SubstValue)>) -> Self {
        substitutions.sort_by(|a, b| a.0.cmp(&b.0));
        EnforcementAction {
            kind: ActionKind::Modify,
            substitutions,
            delay_ticks: 0,
        }
    }

    pub fn delay(ticks: u64) -> Self {
        EnforcementAction {
            kind: ActionKind::Delay,
            substitutions: Vec::new(),
            delay_ticks: ticks,
        }
    }
}

/// Decision handed out when no mechanism fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DefaultDecision {
    Allow,
    Deny,
}

impl DefaultDecision {
    pub fn kind(&self) -> ActionKind {
        match self {
            DefaultDecision::Allow => ActionKind::Allow,
            DefaultDecision::Deny => ActionKind::Deny,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mechanism {
    pub name: String,
    pub trigger: EventPattern,
    pub condition: ConditionNode,
    pub action: EnforcementAction,
    /// Informational tick granularity label, e.g. "1 day".
    pub granularity: Option<String>,
}

impl Mechanism {
    /// Static checks shared by the parser, the interpreter, and the
    /// compiler. `allow_vars` is true only inside templates.
    pub fn validate(&self, allow_vars: bool) -> Result<(), PolicyError> {
        let scope = format!("mechanism {}", self.name);
        if self.trigger.phase != Phase::Tentative {
            return Err(PolicyError::semantic(
                &scope,
                "preventive mechanisms must trigger on tentative events",
            ));
        }
        self.condition.validate(&scope)?;
        match self.action.kind {
            ActionKind::Modify if self.action.substitutions.is_empty() => {
                return Err(PolicyError::semantic(
                    &scope,
                    "modify action needs at least one substitution",
                ));
            }
            ActionKind::Delay if self.action.delay_ticks == 0 => {
                return Err(PolicyError::semantic(
                    &scope,
                    "delay must postpone by at least one tick",
                ));
            }
            _ => {}
        }
        if !allow_vars {
            let vars = self.vars();
            if let Some(first) = vars.iter().next() {
                return Err(PolicyError::semantic(
                    &scope,
                    format!("unbound variable `${first}` outside a template"),
                ));
            }
        }
        Ok(())
    }

    /// All template variables referenced anywhere in the mechanism.
    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.trigger.vars(&mut out);
        self.condition.vars(&mut out);
        for (_, value) in &self.action.substitutions {
            if let SubstValue::Var(v) = value {
                out.insert(v.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum VarDomain {
    Entity,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateVar {
    pub name: String,
    pub domain: VarDomain,
}

/// A mechanism generalized over variables, plus the configuration rule
/// whose matched events supply the bindings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismTemplate {
    pub name: String,
    pub variables: Vec<TemplateVar>,
    pub body: Mechanism,
    pub config_rule: EventPattern,
}

impl MechanismTemplate {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let scope = format!("template {}", self.name);
        self.body.validate(true)?;
        let declared: BTreeSet<String> =
            self.variables.iter().map(|v| v.name.clone()).collect();
        for used in self.body.vars() {
            if !declared.contains(&used) {
                return Err(PolicyError::semantic(
                    &scope,
                    format!("variable `${used}` is not declared"),
                ));
            }
        }
        let mut bound = BTreeSet::new();
        self.config_rule.vars(&mut bound);
        for var in &declared {
            if !bound.contains(var) {
                return Err(PolicyError::semantic(
                    &scope,
                    format!("configuration rule never binds `${var}`"),
                ));
            }
        }
        Ok(())
    }
}

/// One parsed top-level item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PolicyItem {
    Mechanism(Mechanism),
    Template(MechanismTemplate),
}

/// A parsed policy file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub items: Vec<PolicyItem>,
}

impl Policy {
    /// The ground mechanisms, in declaration order.
    pub fn mechanisms(&self) -> Vec<Mechanism> {
        self.items
            .iter()
            .filter_map(|item| match item {
                PolicyItem::Mechanism(m) => Some(m.clone()),
                PolicyItem::Template(_) => None,
            })
            .collect()
    }

    pub fn templates(&self) -> Vec<MechanismTemplate> {
        self.items
            .iter()
            .filter_map(|item| match item {
                PolicyItem::Template(t) => Some(t.clone()),
                PolicyItem::Mechanism(_) => None,
            })
            .collect()
    }
}

/// Instantiate a template with concrete bindings. Pure, so repeating the
/// call with equal bindings returns an identical mechanism. Every declared
/// variable must be bound.
pub fn instantiate(
    template: &MechanismTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<Mechanism, PolicyError> {
    let missing: Vec<&str> = template
        .variables
        .iter()
        .map(|v| v.name.as_str())
        .filter(|name| !bindings.contains_key(*name))
        .collect();
    if !missing.is_empty() {
        return Err(PolicyError::MissingBindings {
            variables: missing.join(", "),
        });
    }
    let mut mechanism = template.body.clone();
    substitute_pattern(&mut mechanism.trigger, bindings);
    mechanism.condition.substitute(bindings);
    for (_, value) in &mut mechanism.action.substitutions {
        if let SubstValue::Var(v) = value {
            if let Some(concrete) = bindings.get(v) {
                *value = SubstValue::Literal(concrete.clone());
            }
        }
    }
    mechanism.validate(false)?;
    Ok(mechanism)
}

/// Match an event against a configuration rule, extracting variable
/// bindings. Returns `None` when the event does not match the rule's
/// concrete constraints.
pub fn extract_bindings(
    config_rule: &EventPattern,
    event: &Event,
) -> Option<BTreeMap<String, String>> {
    if config_rule.activity != event.activity {
        return None;
    }
    let mut bindings = BTreeMap::new();
    for (name, matcher) in &config_rule.attrs {
        let value = event.attrs.get(name)?;
        match matcher {
            ValueMatcher::Equals(expected) if expected == value => {}
            ValueMatcher::Equals(_) => return None,
            ValueMatcher::Any => {}
            ValueMatcher::Var(var) => {
                bindings.insert(var.clone(), value.clone());
            }
        }
    }
    Some(bindings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(phase: Phase, activity: &str, attrs: &[(&str, ValueMatcher)]) -> EventPattern {
        EventPattern::new(
            phase,
            activity,
            attrs
                .iter()
                .map(|(k, m)| (k.to_string(), m.clone()))
                .collect(),
        )
        .unwrap()
    }

    fn ground_mechanism() -> Mechanism {
        Mechanism {
            name: "allowBilling".into(),
            trigger: pattern(
                Phase::Tentative,
                "sendMessage",
                &[("type", ValueMatcher::Equals("billing".into()))],
            ),
            condition: ConditionNode::Always,
            action: EnforcementAction::allow(),
            granularity: None,
        }
    }

    #[test]
    fn attrs_are_sorted_and_unique() {
        let p = pattern(
            Phase::Tentative,
            "a",
            &[("z", ValueMatcher::Any), ("b", ValueMatcher::Any)],
        );
        assert_eq!(p.attrs[0].0, "b");
        assert!(EventPattern::new(
            Phase::Tentative,
            "a",
            vec![
                ("x".into(), ValueMatcher::Any),
                ("x".into(), ValueMatcher::Any)
            ],
        )
        .is_err());
    }

    #[test]
    fn matching_semantics() {
        let p = pattern(
            Phase::Actual,
            "sendMessage",
            &[
                ("type", ValueMatcher::Equals("billing".into())),
                ("to", ValueMatcher::Any),
            ],
        );
        let hit = Event::new(
            "sendMessage",
            [("type", "billing"), ("to", "a@example.org")],
        );
        let wrong_value = Event::new("sendMessage", [("type", "ads"), ("to", "a@example.org")]);
        let missing_attr = Event::new("sendMessage", [("type", "billing")]);
        let wrong_activity = Event::new("delete", [("type", "billing"), ("to", "x")]);
        assert!(p.matches(&hit));
        assert!(!p.matches(&wrong_value));
        assert!(!p.matches(&missing_attr), "wildcard requires presence");
        assert!(!p.matches(&wrong_activity));
    }

    #[test]
    fn trigger_must_be_tentative() {
        let mut m = ground_mechanism();
        m.trigger.phase = Phase::Actual;
        let err = m.validate(false).unwrap_err();
        assert!(matches!(err, PolicyError::Semantic { .. }));
    }

    #[test]
    fn condition_patterns_must_be_actual() {
        let mut m = ground_mechanism();
        m.condition = ConditionNode::EventMatch(pattern(
            Phase::Tentative,
            "delete",
            &[],
        ));
        assert!(m.validate(false).is_err());
    }

    #[test]
    fn zero_windows_are_rejected() {
        let mut m = ground_mechanism();
        m.condition = ConditionNode::Within {
            window: 0,
            child: Box::new(ConditionNode::Always),
        };
        assert!(m.validate(false).is_err());
    }

    #[test]
    fn vars_outside_templates_are_rejected() {
        let mut m = ground_mechanism();
        m.trigger = pattern(
            Phase::Tentative,
            "sendMessage",
            &[("to", ValueMatcher::Var("email".into()))],
        );
        assert!(m.validate(false).is_err());
        assert!(m.validate(true).is_ok());
    }

    fn sample_template() -> MechanismTemplate {
        let mut body = ground_mechanism();
        body.trigger = pattern(
            Phase::Tentative,
            "sendMessage",
            &[
                ("type", ValueMatcher::Equals("billing".into())),
                ("to", ValueMatcher::Var("email".into())),
            ],
        );
        MechanismTemplate {
            name: "billingPerUser".into(),
            variables: vec![TemplateVar {
                name: "email".into(),
                domain: VarDomain::Data,
            }],
            body,
            config_rule: pattern(
                Phase::Actual,
                "subscribe",
                &[("email", ValueMatcher::Var("email".into()))],
            ),
        }
    }

    #[test]
    fn template_validation_catches_unbound_and_undeclared() {
        let t = sample_template();
        t.validate().unwrap();

        let mut undeclared = t.clone();
        undeclared.variables.clear();
        assert!(undeclared.validate().is_err());

        let mut unbindable = t.clone();
        unbindable.config_rule = pattern(Phase::Actual, "subscribe", &[]);
        assert!(unbindable.validate().is_err());
    }

    #[test]
    fn instantiation_is_total_and_idempotent() {
        let t = sample_template();
        let bindings: BTreeMap<String, String> =
            [("email".to_string(), "a@example.org".to_string())].into();
        let m1 = instantiate(&t, &bindings).unwrap();
        let m2 = instantiate(&t, &bindings).unwrap();
        assert_eq!(m1, m2);
        assert!(m1
            .trigger
            .attrs
            .iter()
            .any(|(k, v)| k == "to" && *v == ValueMatcher::Equals("a@example.org".into())));

        let err = instantiate(&t, &BTreeMap::new()).unwrap_err();
        assert_eq!(
            err,
            PolicyError::MissingBindings {
                variables: "email".into()
            }
        );
    }

    #[test]
    fn binding_extraction() {
        let t = sample_template();
        let event = Event::new("subscribe", [("email", "a@example.org"), ("plan", "pro")]);
        let bindings = extract_bindings(&t.config_rule, &event).unwrap();
        assert_eq!(bindings["email"], "a@example.org");

        let other = Event::new("unsubscribe", [("email", "a@example.org")]);
        assert!(extract_bindings(&t.config_rule, &other).is_none());
    }
}
