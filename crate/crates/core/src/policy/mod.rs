//! Event-condition-action policy language.
//!
//! A policy is a list of mechanisms. Each mechanism watches for a tentative
//! event (something a party intends to do), evaluates a condition over the
//! history of actual events, and answers with an enforcement action: allow,
//! deny, modify (allow with attribute substitutions), or delay.
//!
//! Mechanism templates generalize a mechanism over entity and data
//! variables; a configuration rule describes the event whose attributes bind
//! those variables, producing one concrete mechanism per binding.
//!
//! The module ships a parser and canonical printer for the textual form and
//! a plaintext reference interpreter ([`interp::Interpreter`]) that defines
//! the semantics the on-chain compiled form must reproduce.

mod ast;
mod interp;
mod parse;
mod print;

pub use ast::{
    extract_bindings, instantiate, ActionKind, ConditionNode, DefaultDecision,
    EnforcementAction, Event, EventPattern, ExternalKind, Mechanism, MechanismTemplate, Phase,
    Policy, PolicyItem, SubstValue, TemplateVar, ValueMatcher, VarDomain,
};
pub use interp::{Decision, Interpreter};
pub use parse::parse_policy;
pub use print::print_policy;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax {
        line: u32,
        col: u32,
        message: String,
    },
    #[error("semantic error in {scope}: {message}")]
    Semantic { scope: String, message: String },
    #[error("operator `{operator}` is not supported by this evaluator")]
    UnsupportedOperator { operator: String },
    #[error("tick {tick} is earlier than the current tick {current}")]
    StaleTick { tick: u64, current: u64 },
    #[error("missing bindings for template variables: {variables}")]
    MissingBindings { variables: String },
}

impl PolicyError {
    pub(crate) fn semantic(scope: impl Into<String>, message: impl Into<String>) -> Self {
        PolicyError::Semantic {
            scope: scope.into(),
            message: message.into(),
        }
    }
}
