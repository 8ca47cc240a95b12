//! Lexer and recursive-descent parser for the policy text format.
//!
//! ```text
//! file      := item+
//! item      := mechanism | template
//! mechanism := "mechanism" ident "{"
//!                  "on" phase pattern
//!                  ("if" condition)?
//!                  "then" action
//!                  ("granularity" string)?
//!              "}"
//! template  := "template" ident "(" vardecl ("," vardecl)* ")" "{"
//!                  mechanism
//!                  "config" "on" phase pattern
//!              "}"
//! vardecl   := ("entity" | "data") ident
//! phase     := "tentative" | "actual"
//! pattern   := ident "(" (attr ("," attr)*)? ")"
//! attr      := ident "=" (string | "*" | "$" ident)
//! condition := and_expr ("or" and_expr)*
//! and_expr  := unary ("and" unary)*
//! unary     := "not" unary | atom
//! atom      := "(" condition ")"
//!            | "within" "(" number "," (phase pattern | condition) ")"
//!            | "atmost" "(" number "," number "," phase pattern ")"
//!            | "happened" "(" phase pattern ")"
//!            | ("trust" | "context" | "role") "(" ident ")"
//! action    := "allow" | "deny"
//!            | "modify" "(" ident "=" (string | "$" ident) ("," ...)* ")"
//!            | "delay" "(" number ")"
//! ```
//!
//! `#` starts a comment running to end of line. Strings are double-quoted
//! with `\"`, `\\`, `\n`, `\t`, and `\r` escapes; raw newlines inside
//! strings are rejected.

use super::ast::{
    ConditionNode, EnforcementAction, EventPattern, ExternalKind, Mechanism,
    MechanismTemplate, Phase, Policy, PolicyItem, SubstValue, TemplateVar, ValueMatcher,
    VarDomain,
};
use super::PolicyError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Num(u64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Eq,
    Star,
    Dollar,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Num(n) => format!("number {n}"),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Star => "`*`".into(),
            Tok::Dollar => "`$`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexed {
    tok: Tok,
    line: u32,
    col: u32,
}

fn syntax(line: u32, col: u32, message: impl Into<String>) -> PolicyError {
    PolicyError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Lexed>, PolicyError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1u32, 1u32);

    macro_rules! bump {
        () => {{
            let c = chars.next();
            if let Some(ch) = c {
                if ch == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
            }
            c
        }};
    }

    while let Some(&c) = chars.peek() {
        let (tline, tcol) = (line, col);
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                bump!();
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump!();
                }
            }
            '{' | '}' | '(' | ')' | ',' | '=' | '*' | '$' => {
                bump!();
                let tok = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    '=' => Tok::Eq,
                    '*' => Tok::Star,
                    _ => Tok::Dollar,
                };
                out.push(Lexed {
                    tok,
                    line: tline,
                    col: tcol,
                });
            }
            '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    match bump!() {
                        None => return Err(syntax(tline, tcol, "unterminated string literal")),
                        Some('"') => break,
                        Some('\n') => {
                            return Err(syntax(
                                tline,
                                tcol,
                                "string literals may not contain raw newlines",
                            ))
                        }
                        Some('\\') => match bump!() {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some('r') => s.push('\r'),
                            other => {
                                return Err(syntax(
                                    line,
                                    col,
                                    format!(
                                        "unknown escape `\\{}`",
                                        other.map(String::from).unwrap_or_default()
                                    ),
                                ))
                            }
                        },
                        Some(ch) => s.push(ch),
                    }
                }
                out.push(Lexed {
                    tok: Tok::Str(s),
                    line: tline,
                    col: tcol,
                });
            }
            '0'..='9' => {
                let mut value: u64 = 0;
                while let Some(&d) = chars.peek() {
                    if !d.is_ascii_digit() {
                        break;
                    }
                    bump!();
                    value = value
                        .checked_mul(10)
                        .and_then(|v| v.checked_add((d as u8 - b'0') as u64))
                        .ok_or_else(|| syntax(tline, tcol, "number does not fit in 64 bits"))?;
                }
                out.push(Lexed {
                    tok: Tok::Num(value),
                    line: tline,
                    col: tcol,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut word = String::new();
                while let Some(&w) = chars.peek() {
                    if !(w.is_ascii_alphanumeric() || w == '_') {
                        break;
                    }
                    word.push(w);
                    bump!();
                }
                out.push(Lexed {
                    tok: Tok::Word(word),
                    line: tline,
                    col: tcol,
                });
            }
            other => {
                return Err(syntax(
                    tline,
                    tcol,
                    format!("unexpected character `{other}`"),
                ))
            }
        }
    }
    out.push(Lexed {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Lexed>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Lexed {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> &Lexed {
        let t = &self.tokens[self.pos];
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: impl Into<String>) -> PolicyError {
        let t = self.peek();
        syntax(t.line, t.col, message)
    }

    fn expect(&mut self, want: Tok) -> Result<(), PolicyError> {
        if self.peek().tok == want {
            self.next();
            Ok(())
        } else {
            Err(self.error_here(format!(
                "expected {}, found {}",
                want.describe(),
                self.peek().tok.describe()
            )))
        }
    }

    fn expect_word(&mut self, keyword: &str) -> Result<(), PolicyError> {
        match &self.peek().tok {
            Tok::Word(w) if w == keyword => {
                self.next();
                Ok(())
            }
            other => Err(self.error_here(format!(
                "expected `{keyword}`, found {}",
                other.describe()
            ))),
        }
    }

    fn peek_word(&self) -> Option<&str> {
        match &self.peek().tok {
            Tok::Word(w) => Some(w.as_str()),
            _ => None,
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, PolicyError> {
        match &self.peek().tok {
            Tok::Word(w) => {
                let w = w.clone();
                self.next();
                Ok(w)
            }
            other => Err(self.error_here(format!(
                "expected {what}, found {}",
                other.describe()
            ))),
        }
    }

    fn number(&mut self, what: &str) -> Result<u64, PolicyError> {
        match self.peek().tok {
            Tok::Num(n) => {
                self.next();
                Ok(n)
            }
            ref other => Err(self.error_here(format!(
                "expected {what}, found {}",
                other.describe()
            ))),
        }
    }

    fn string(&mut self, what: &str) -> Result<String, PolicyError> {
        match &self.peek().tok {
            Tok::Str(s) => {
                let s = s.clone();
                self.next();
                Ok(s)
            }
            other => Err(self.error_here(format!(
                "expected {what}, found {}",
                other.describe()
            ))),
        }
    }

    fn phase(&mut self) -> Result<Phase, PolicyError> {
        match self.peek_word() {
            Some("tentative") => {
                self.next();
                Ok(Phase::Tentative)
            }
            Some("actual") => {
                self.next();
                Ok(Phase::Actual)
            }
            _ => Err(self.error_here(format!(
                "expected `tentative` or `actual`, found {}",
                self.peek().tok.describe()
            ))),
        }
    }

    fn pattern(&mut self, phase: Phase) -> Result<EventPattern, PolicyError> {
        let at = (self.peek().line, self.peek().col);
        let activity = self.ident("an activity name")?;
        self.expect(Tok::LParen)?;
        let mut attrs = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                let name = self.ident("an attribute name")?;
                self.expect(Tok::Eq)?;
                let matcher = match &self.peek().tok {
                    Tok::Str(s) => {
                        let s = s.clone();
                        self.next();
                        ValueMatcher::Equals(s)
                    }
                    Tok::Star => {
                        self.next();
                        ValueMatcher::Any
                    }
                    Tok::Dollar => {
                        self.next();
                        ValueMatcher::Var(self.ident("a variable name")?)
                    }
                    other => {
                        return Err(self.error_here(format!(
                            "expected a string, `*`, or `$variable`, found {}",
                            other.describe()
                        )))
                    }
                };
                attrs.push((name, matcher));
                if self.peek().tok == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        EventPattern::new(phase, activity, attrs)
            .map_err(|e| syntax(at.0, at.1, e.to_string()))
    }

    fn condition(&mut self) -> Result<ConditionNode, PolicyError> {
        let mut terms = vec![self.and_expr()?];
        while self.peek_word() == Some("or") {
            self.next();
            terms.push(self.and_expr()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            ConditionNode::Or(terms)
        })
    }

    fn and_expr(&mut self) -> Result<ConditionNode, PolicyError> {
        let mut terms = vec![self.unary()?];
        while self.peek_word() == Some("and") {
            self.next();
            terms.push(self.unary()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            ConditionNode::And(terms)
        })
    }

    fn unary(&mut self) -> Result<ConditionNode, PolicyError> {
        if self.peek_word() == Some("not") {
            self.next();
            Ok(ConditionNode::Not(Box::new(self.unary()?)))
        } else {
            self.atom()
        }
    }

    fn atom(&mut self) -> Result<ConditionNode, PolicyError> {
        if self.peek().tok == Tok::LParen {
            self.next();
            let inner = self.condition()?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        match self.peek_word() {
            Some("within") => {
                self.next();
                self.expect(Tok::LParen)?;
                let window = self.number("a window length in ticks")?;
                self.expect(Tok::Comma)?;
                let child = if matches!(self.peek_word(), Some("tentative") | Some("actual")) {
                    let phase = self.phase()?;
                    ConditionNode::EventMatch(self.pattern(phase)?)
                } else {
                    self.condition()?
                };
                self.expect(Tok::RParen)?;
                Ok(ConditionNode::Within {
                    window,
                    child: Box::new(child),
                })
            }
            Some("atmost") => {
                self.next();
                self.expect(Tok::LParen)?;
                let limit = self.number("an occurrence limit")?;
                self.expect(Tok::Comma)?;
                let window = self.number("a window length in ticks")?;
                self.expect(Tok::Comma)?;
                let phase = self.phase()?;
                let pattern = self.pattern(phase)?;
                self.expect(Tok::RParen)?;
                Ok(ConditionNode::AtMost {
                    limit,
                    window,
                    pattern,
                })
            }
            Some("happened") => {
                self.next();
                self.expect(Tok::LParen)?;
                let phase = self.phase()?;
                let pattern = self.pattern(phase)?;
                self.expect(Tok::RParen)?;
                Ok(ConditionNode::EventMatch(pattern))
            }
            Some(kw @ ("trust" | "context" | "role")) => {
                let kind = match kw {
                    "trust" => ExternalKind::Trust,
                    "context" => ExternalKind::Context,
                    _ => ExternalKind::Role,
                };
                self.next();
                self.expect(Tok::LParen)?;
                let subject = self.ident("a predicate argument")?;
                self.expect(Tok::RParen)?;
                Ok(ConditionNode::External { kind, subject })
            }
            _ => Err(self.error_here(format!(
                "expected a condition, found {}",
                self.peek().tok.describe()
            ))),
        }
    }

    fn action(&mut self) -> Result<EnforcementAction, PolicyError> {
        match self.peek_word() {
            Some("allow") => {
                self.next();
                Ok(EnforcementAction::allow())
            }
            Some("deny") => {
                self.next();
                Ok(EnforcementAction::deny())
            }
            Some("modify") => {
                self.next();
                self.expect(Tok::LParen)?;
                let mut subs = Vec::new();
                loop {
                    let name = self.ident("an attribute name")?;
                    self.expect(Tok::Eq)?;
                    let value = match &self.peek().tok {
                        Tok::Str(s) => {
                            let s = s.clone();
                            self.next();
                            SubstValue::Literal(s)
                        }
                        Tok::Dollar => {
                            self.next();
                            SubstValue::Var(self.ident("a variable name")?)
                        }
                        other => {
                            return Err(self.error_here(format!(
                                "expected a string or `$variable`, found {}",
                                other.describe()
                            )))
                        }
                    };
                    subs.push((name, value));
                    if self.peek().tok == Tok::Comma {
                        self.next();
                    } else {
                        break;
                    }
                }
                self.expect(Tok::RParen)?;
                Ok(EnforcementAction::modify(subs))
            }
            Some("delay") => {
                self.next();
                self.expect(Tok::LParen)?;
                let ticks = self.number("a delay in ticks")?;
                self.expect(Tok::RParen)?;
                Ok(EnforcementAction::delay(ticks))
            }
            _ => Err(self.error_here(format!(
                "expected `allow`, `deny`, `modify`, or `delay`, found {}",
                self.peek().tok.describe()
            ))),
        }
    }

    fn mechanism(&mut self) -> Result<Mechanism, PolicyError> {
        self.expect_word("mechanism")?;
        let name = self.ident("a mechanism name")?;
        self.expect(Tok::LBrace)?;
        self.expect_word("on")?;
        let phase = self.phase()?;
        let trigger = self.pattern(phase)?;
        let condition = if self.peek_word() == Some("if") {
            self.next();
            self.condition()?
        } else {
            ConditionNode::Always
        };
        self.expect_word("then")?;
        let action = self.action()?;
        let granularity = if self.peek_word() == Some("granularity") {
            self.next();
            Some(self.string("a granularity label")?)
        } else {
            None
        };
        self.expect(Tok::RBrace)?;
        Ok(Mechanism {
            name,
            trigger,
            condition,
            action,
            granularity,
        })
    }

    fn template(&mut self) -> Result<MechanismTemplate, PolicyError> {
        self.expect_word("template")?;
        let name = self.ident("a template name")?;
        self.expect(Tok::LParen)?;
        let mut variables = Vec::new();
        loop {
            let domain = match self.peek_word() {
                Some("entity") => VarDomain::Entity,
                Some("data") => VarDomain::Data,
                _ => {
                    return Err(self.error_here(format!(
                        "expected `entity` or `data`, found {}",
                        self.peek().tok.describe()
                    )))
                }
            };
            self.next();
            variables.push(TemplateVar {
                name: self.ident("a variable name")?,
                domain,
            });
            if self.peek().tok == Tok::Comma {
                self.next();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        self.expect(Tok::LBrace)?;
        let body = self.mechanism()?;
        self.expect_word("config")?;
        self.expect_word("on")?;
        let phase = self.phase()?;
        let config_rule = self.pattern(phase)?;
        self.expect(Tok::RBrace)?;
        Ok(MechanismTemplate {
            name,
            variables,
            body,
            config_rule,
        })
    }
}

/// Parse and statically validate a policy file.
pub fn parse_policy(text: &str) -> Result<Policy, PolicyError> {
    let mut parser = Parser {
        tokens: lex(text)?,
        pos: 0,
    };
    let mut items = Vec::new();
    loop {
        match parser.peek_word() {
            Some("mechanism") => {
                let m = parser.mechanism()?;
                m.validate(false)?;
                items.push(PolicyItem::Mechanism(m));
            }
            Some("template") => {
                let t = parser.template()?;
                t.validate()?;
                items.push(PolicyItem::Template(t));
            }
            _ if parser.peek().tok == Tok::Eof => break,
            _ => {
                return Err(parser.error_here(format!(
                    "expected `mechanism` or `template`, found {}",
                    parser.peek().tok.describe()
                )))
            }
        }
    }
    if items.is_empty() {
        return Err(parser.error_here("policy file contains no items"));
    }
    Ok(Policy { items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ActionKind;

    const BILLING: &str = r#"
# One billing message per 30-tick window, everything else denied by default.
mechanism billingBudget {
  on tentative sendMessage(type = "billing", to = *)
  if atmost(0, 30, actual sendMessage(type = "billing"))
  then allow
  granularity "1 day"
}
"#;

    #[test]
    fn parses_the_billing_mechanism() {
        let policy = parse_policy(BILLING).unwrap();
        let mechs = policy.mechanisms();
        assert_eq!(mechs.len(), 1);
        let m = &mechs[0];
        assert_eq!(m.name, "billingBudget");
        assert_eq!(m.trigger.phase, Phase::Tentative);
        assert_eq!(m.trigger.activity, "sendMessage");
        assert_eq!(m.trigger.attrs.len(), 2);
        assert!(matches!(
            m.condition,
            ConditionNode::AtMost {
                limit: 0,
                window: 30,
                ..
            }
        ));
        assert_eq!(m.action.kind, ActionKind::Allow);
        assert_eq!(m.granularity.as_deref(), Some("1 day"));
    }

    #[test]
    fn parses_a_template() {
        let text = r#"
template billingPerUser(data email, entity user) {
  mechanism billingBudget {
    on tentative sendMessage(type = "billing", to = $email, user = $user)
    if atmost(0, 30, actual sendMessage(type = "billing", to = $email))
    then allow
  }
  config on actual subscribe(email = $email, user = $user)
}
"#;
        let policy = parse_policy(text).unwrap();
        let templates = policy.templates();
        assert_eq!(templates.len(), 1);
        assert_eq!(templates[0].variables.len(), 2);
        assert_eq!(templates[0].variables[0].domain, VarDomain::Data);
    }

    #[test]
    fn parses_nested_boolean_conditions() {
        let text = r#"
mechanism guard {
  on tentative delete(target = "profile")
  if not happened(actual withdraw()) and (within(7, actual login()) or atmost(2, 14, actual delete()))
  then deny
}
"#;
        let policy = parse_policy(text).unwrap();
        let m = &policy.mechanisms()[0];
        match &m.condition {
            ConditionNode::And(terms) => {
                assert_eq!(terms.len(), 2);
                assert!(matches!(terms[0], ConditionNode::Not(_)));
                assert!(matches!(&terms[1], ConditionNode::Or(or) if or.len() == 2));
            }
            other => panic!("unexpected condition {other:?}"),
        }
    }

    #[test]
    fn missing_paren_reports_line_and_column() {
        let text = "mechanism m {\n  on tentative a()\n  if within(3, actual b()\n  then allow\n}\n";
        let err = parse_policy(text).unwrap_err();
        match err {
            PolicyError::Syntax { line, col, message } => {
                assert_eq!(line, 4);
                assert_eq!(col, 3);
                assert!(message.contains("expected `)`"), "{message}");
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn actual_trigger_is_a_semantic_error() {
        let text = "mechanism m { on actual a() then allow }";
        let err = parse_policy(text).unwrap_err();
        assert!(matches!(err, PolicyError::Semantic { .. }), "{err:?}");
        assert!(err.to_string().contains("tentative"));
    }

    #[test]
    fn external_predicates_parse() {
        let text = r#"
mechanism m {
  on tentative a()
  if trust(high) and role(admin) and context(office)
  then allow
}
"#;
        let policy = parse_policy(text).unwrap();
        match &policy.mechanisms()[0].condition {
            ConditionNode::And(terms) => assert_eq!(terms.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn string_escapes_round_trip() {
        let text = "mechanism m { on tentative a(x = \"line\\none \\\"two\\\"\") then allow }";
        let policy = parse_policy(text).unwrap();
        match &policy.mechanisms()[0].trigger.attrs[0].1 {
            ValueMatcher::Equals(v) => assert_eq!(v, "line\none \"two\""),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_policy_is_an_error() {
        assert!(matches!(
            parse_policy("# nothing here\n"),
            Err(PolicyError::Syntax { .. })
        ));
    }

    #[test]
    fn oversized_numbers_are_rejected() {
        let text = "mechanism m { on tentative a() if within(99999999999999999999, actual b()) then allow }";
        assert!(matches!(parse_policy(text), Err(PolicyError::Syntax { .. })));
    }
}
