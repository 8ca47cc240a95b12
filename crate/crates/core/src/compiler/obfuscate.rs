//! Salted digests over activities and attributes.
//!
//! Every digest commits to the contract's secret 32-byte nonce:
//!
//! - activity digest: `H("obf.activity.v1" ‖ enc(activity) ‖ nonce)`
//! - attribute name digest: `H("obf.attr.v1" ‖ enc(name) ‖ nonce)`
//! - attribute value digest: `H("obf.value.v1" ‖ enc(name) ‖ enc(value) ‖ nonce)`
//!
//! where `enc` is the canonical length-prefixed encoding and `H` is
//! SHA3-256. Value digests bind the attribute name, so equal values under
//! different attributes stay unlinkable. Without the nonce, digests of
//! low-entropy names and values cannot be confirmed by guessing.

use serde::{Deserialize, Serialize};

use crate::canon::{CanonDecode, CanonEncode, CanonError, Decoder, Encoder};
use crate::crypto::{sha3_domain, Hash32, Nonce32};
use crate::policy::{Event, EventPattern, ValueMatcher};

use super::CompileError;

pub fn activity_digest(activity: &str, nonce: &Nonce32) -> Hash32 {
    sha3_domain("obf.activity.v1", |e| {
        e.put_str(activity);
        e.put_raw(nonce.as_bytes());
    })
}

pub fn attr_name_digest(name: &str, nonce: &Nonce32) -> Hash32 {
    sha3_domain("obf.attr.v1", |e| {
        e.put_str(name);
        e.put_raw(nonce.as_bytes());
    })
}

pub fn attr_value_digest(name: &str, value: &str, nonce: &Nonce32) -> Hash32 {
    sha3_domain("obf.value.v1", |e| {
        e.put_str(name);
        e.put_str(value);
        e.put_raw(nonce.as_bytes());
    })
}

/// One obfuscated attribute constraint. `value: None` is a wildcard: the
/// attribute must be present, any value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObfAttr {
    pub name: Hash32,
    pub value: Option<Hash32>,
}

/// An event pattern with every identifier replaced by its salted digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObfuscatedPattern {
    pub activity: Hash32,
    pub attrs: Vec<ObfAttr>,
}

/// A concrete event in obfuscated form: attribute pairs sorted by name
/// digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObfEvent {
    pub activity: Hash32,
    pub attrs: Vec<(Hash32, Hash32)>,
}

pub fn obfuscate_pattern(
    pattern: &EventPattern,
    nonce: &Nonce32,
) -> Result<ObfuscatedPattern, CompileError> {
    let mut attrs = Vec::with_capacity(pattern.attrs.len());
    for (name, matcher) in &pattern.attrs {
        let value = match matcher {
            ValueMatcher::Equals(v) => Some(attr_value_digest(name, v, nonce)),
            ValueMatcher::Any => None,
            ValueMatcher::Var(v) => {
                return Err(CompileError::UninstantiatedVariable {
                    variable: v.clone(),
                })
            }
        };
        attrs.push(ObfAttr {
            name: attr_name_digest(name, nonce),
            value,
        });
    }
    attrs.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(ObfuscatedPattern {
        activity: activity_digest(&pattern.activity, nonce),
        attrs,
    })
}

pub fn obfuscate_event(event: &Event, nonce: &Nonce32) -> ObfEvent {
    let mut attrs: Vec<(Hash32, Hash32)> = event
        .attrs
        .iter()
        .map(|(name, value)| {
            (
                attr_name_digest(name, nonce),
                attr_value_digest(name, value, nonce),
            )
        })
        .collect();
    attrs.sort();
    ObfEvent {
        activity: activity_digest(&event.activity, nonce),
        attrs,
    }
}

impl ObfEvent {
    pub fn value_of(&self, name: &Hash32) -> Option<&Hash32> {
        self.attrs
            .binary_search_by(|(n, _)| n.cmp(name))
            .ok()
            .map(|i| &self.attrs[i].1)
    }

    /// Apply obfuscated substitutions: replace the value digest of each
    /// named attribute, appending the pair when the attribute is absent.
    pub fn substitute(&self, substitutions: &[(Hash32, Hash32)]) -> ObfEvent {
        let mut out = self.clone();
        for (name, value) in substitutions {
            match out.attrs.binary_search_by(|(n, _)| n.cmp(name)) {
                Ok(i) => out.attrs[i].1 = *value,
                Err(i) => out.attrs.insert(i, (*name, *value)),
            }
        }
        out
    }
}

/// Obfuscated matching, mirroring [`EventPattern::matches`] digest for
/// digest: equal activity digests, and every pattern attribute present with
/// an equal value digest (wildcards only require presence).
pub fn match_obfuscated(pattern: &ObfuscatedPattern, event: &ObfEvent) -> bool {
    if pattern.activity != event.activity {
        return false;
    }
    pattern.attrs.iter().all(|attr| {
        match (event.value_of(&attr.name), &attr.value) {
            (Some(actual), Some(expected)) => actual == expected,
            (Some(_), None) => true,
            (None, _) => false,
        }
    })
}

impl CanonEncode for ObfAttr {
    fn encode(&self, enc: &mut Encoder) {
        self.name.encode(enc);
        enc.put_opt(&self.value);
    }
}

impl CanonDecode for ObfAttr {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(ObfAttr {
            name: Hash32::decode(dec)?,
            value: dec.opt()?,
        })
    }
}

impl CanonEncode for ObfuscatedPattern {
    fn encode(&self, enc: &mut Encoder) {
        self.activity.encode(enc);
        enc.put_seq(&self.attrs);
    }
}

impl CanonDecode for ObfuscatedPattern {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        Ok(ObfuscatedPattern {
            activity: Hash32::decode(dec)?,
            attrs: dec.seq()?,
        })
    }
}

impl CanonEncode for ObfEvent {
    fn encode(&self, enc: &mut Encoder) {
        self.activity.encode(enc);
        enc.put_u32(self.attrs.len() as u32);
        for (name, value) in &self.attrs {
            name.encode(enc);
            value.encode(enc);
        }
    }
}

impl CanonDecode for ObfEvent {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CanonError> {
        let activity = Hash32::decode(dec)?;
        let count = dec.u32()? as usize;
        let mut attrs = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            attrs.push((Hash32::decode(dec)?, Hash32::decode(dec)?));
        }
        Ok(ObfEvent { activity, attrs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{parse_policy, Phase};

    fn nonce() -> Nonce32 {
        Nonce32([9u8; 32])
    }

    fn pattern(text: &str) -> EventPattern {
        let policy = parse_policy(&format!(
            "mechanism m {{ on tentative {text} then allow }}"
        ))
        .unwrap();
        policy.mechanisms()[0].trigger.clone()
    }

    #[test]
    fn obfuscated_matching_mirrors_plaintext_matching() {
        let cases = [
            r#"sendMessage(type = "billing", to = *)"#,
            r#"sendMessage()"#,
            r#"delete(target = "profile")"#,
        ];
        let events = [
            Event::new(
                "sendMessage",
                [("type", "billing"), ("to", "a@example.org")],
            ),
            Event::new("sendMessage", [("type", "ads")]),
            Event::new("sendMessage", [("type", "billing")]),
            Event::new("delete", [("target", "profile")]),
            Event::new("delete", [] as [(&str, &str); 0]),
        ];
        for text in cases {
            let mut p = pattern(text);
            p.phase = Phase::Actual;
            let obf = obfuscate_pattern(&p, &nonce()).unwrap();
            for event in &events {
                assert_eq!(
                    match_obfuscated(&obf, &obfuscate_event(event, &nonce())),
                    p.matches(event),
                    "pattern {text} event {event:?}"
                );
            }
        }
    }

    #[test]
    fn digests_are_nonce_sensitive() {
        let other = Nonce32([1u8; 32]);
        assert_ne!(
            activity_digest("sendMessage", &nonce()),
            activity_digest("sendMessage", &other)
        );
        assert_ne!(
            attr_value_digest("type", "billing", &nonce()),
            attr_value_digest("type", "billing", &other)
        );
    }

    #[test]
    fn value_digests_bind_the_attribute_name() {
        assert_ne!(
            attr_value_digest("to", "x", &nonce()),
            attr_value_digest("from", "x", &nonce())
        );
    }

    #[test]
    fn events_with_different_nonces_do_not_match() {
        let mut p = pattern(r#"sendMessage(type = "billing")"#);
        p.phase = Phase::Actual;
        let obf = obfuscate_pattern(&p, &nonce()).unwrap();
        let event = Event::new("sendMessage", [("type", "billing")]);
        assert!(!match_obfuscated(
            &obf,
            &obfuscate_event(&event, &Nonce32([1u8; 32]))
        ));
    }

    #[test]
    fn substitution_replaces_or_appends() {
        let n = nonce();
        let event = Event::new("forward", [("subject", "alice")]);
        let obf = obfuscate_event(&event, &n);
        let subs = vec![
            (
                attr_name_digest("subject", &n),
                attr_value_digest("subject", "pseudonym-1", &n),
            ),
            (
                attr_name_digest("note", &n),
                attr_value_digest("note", "redacted", &n),
            ),
        ];
        let substituted = obf.substitute(&subs);
        let expected = obfuscate_event(
            &Event::new("forward", [("subject", "pseudonym-1"), ("note", "redacted")]),
            &n,
        );
        assert_eq!(substituted, expected);
    }

    #[test]
    fn canon_round_trip() {
        let mut p = pattern(r#"sendMessage(type = "billing", to = *)"#);
        p.phase = Phase::Actual;
        let obf = obfuscate_pattern(&p, &nonce()).unwrap();
        let bytes = obf.canon_bytes();
        assert_eq!(ObfuscatedPattern::from_canon_bytes(&bytes).unwrap(), obf);

        let event = obfuscate_event(
            &Event::new("sendMessage", [("type", "billing")]),
            &nonce(),
        );
        let bytes = event.canon_bytes();
        assert_eq!(ObfEvent::from_canon_bytes(&bytes).unwrap(), event);
    }
}
