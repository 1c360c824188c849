//! Per-agent knowledge base.
//!
//! Beliefs are tagged with a situational-awareness level: 1 for the existence
//! of objects (positions, assigned areas), 2 for the context of the situation
//! (is a victim identified, who tracks it), 3 for projections (arrival
//! estimates). Conflicting assertions are arbitrated by a total order on
//! `(tick, source rank, origin id)` so that merges commute.

use std::cmp::{Ordering, Reverse};
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{canonical_string, EventKind, MissionEvent};
use crate::types::{AgentId, OperatorId, Position, Tick};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefValue {
    Position(Position),
    Scalar(f64),
    Boolean(bool),
    Text(String),
    /// Seconds.
    Duration(f64),
    Identifier(String),
}

impl BeliefValue {
    /// Numeric view used by ordered comparisons. Durations compare as seconds.
    pub fn as_number(&self) -> Option<f64> {
        match self {
            BeliefValue::Scalar(v) | BeliefValue::Duration(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_position(&self) -> Option<Position> {
        match self {
            BeliefValue::Position(p) => Some(*p),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            BeliefValue::Text(s) | BeliefValue::Identifier(s) => Some(s),
            _ => None,
        }
    }

    /// Plain rendering used for key templates and rationale text.
    pub fn render(&self) -> String {
        match self {
            BeliefValue::Position(p) => format!("{p}"),
            BeliefValue::Scalar(v) => format!("{v:.2}"),
            BeliefValue::Boolean(b) => b.to_string(),
            BeliefValue::Text(s) | BeliefValue::Identifier(s) => s.clone(),
            BeliefValue::Duration(v) => format!("{v:.0}s"),
        }
    }

    fn canonical(&self) -> String {
        canonical_string(&serde_json::to_value(self).expect("belief values serialize"))
    }
}

impl fmt::Display for BeliefValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Sensor(AgentId),
    Agent(AgentId),
    Human(OperatorId),
}

impl Source {
    /// human(3) > agent(2) > sensor(1)
    pub fn rank(&self) -> u8 {
        match self {
            Source::Sensor(_) => 1,
            Source::Agent(_) => 2,
            Source::Human(_) => 3,
        }
    }

    pub fn origin(&self) -> &str {
        match self {
            Source::Sensor(a) | Source::Agent(a) => a.as_str(),
            Source::Human(o) => o.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub key: String,
    pub level: u8,
    pub value: BeliefValue,
    pub source: Source,
    pub tick: Tick,
    #[serde(default)]
    pub version: u64,
}

impl Belief {
    pub fn new(key: impl Into<String>, level: u8, value: BeliefValue, source: Source, tick: Tick) -> Self {
        Self { key: key.into(), level, value, source, tick, version: 0 }
    }

    /// Position in the conflict-resolution order; greater wins.
    fn precedence(&self) -> (Tick, u8, Reverse<&str>) {
        (self.tick, self.source.rank(), Reverse(self.source.origin()))
    }

    /// Content equality ignoring the store-local version number.
    pub fn same_content(&self, other: &Belief) -> bool {
        self.key == other.key
            && self.level == other.level
            && self.value == other.value
            && self.source == other.source
            && self.tick == other.tick
    }

    pub fn validate(&self) -> Result<(), KbError> {
        if !(1..=3).contains(&self.level) {
            return Err(KbError::MalformedBelief { key: self.key.clone(), reason: format!("level {} outside 1..=3", self.level) });
        }
        if self.key.is_empty() || self.key.split('.').any(str::is_empty) || self.key.contains('*') {
            return Err(KbError::MalformedBelief { key: self.key.clone(), reason: "invalid key".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KbError {
    #[error("malformed belief `{key}`: {reason}")]
    MalformedBelief { key: String, reason: String },
    #[error("belief `{key}` asserted at tick {tick}, beyond current tick {now}")]
    FutureTick { key: String, tick: Tick, now: Tick },
}

/// Dotted key pattern; `*` is only allowed as the whole last segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KeyPattern {
    text: String,
    prefix: Option<String>,
}

impl KeyPattern {
    pub fn parse(text: &str) -> Result<Self, String> {
        if text == "*" {
            return Ok(Self { text: text.into(), prefix: Some(String::new()) });
        }
        let segments: Vec<&str> = text.split('.').collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(format!("pattern `{text}` has an empty segment"));
        }
        let (last, head) = segments.split_last().expect("split yields at least one segment");
        if head.iter().any(|s| s.contains('*')) || (last.contains('*') && *last != "*") {
            return Err(format!("pattern `{text}`: wildcard only allowed as the final segment"));
        }
        let prefix = (*last == "*").then(|| format!("{}.", head.join(".")));
        Ok(Self { text: text.into(), prefix })
    }

    pub fn matches(&self, key: &str) -> bool {
        match &self.prefix {
            Some(p) => key.len() > p.len() && key.starts_with(p.as_str()),
            None => key == self.text,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl TryFrom<String> for KeyPattern {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        KeyPattern::parse(&s)
    }
}

impl From<KeyPattern> for String {
    fn from(p: KeyPattern) -> String {
        p.text
    }
}

#[derive(Debug, Clone, Default)]
pub struct MergeReport {
    pub events: Vec<MissionEvent>,
    /// Index into the incoming batch and the reason it was skipped.
    pub rejected: Vec<(usize, KbError)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    owner: AgentId,
    entries: BTreeMap<String, Belief>,
    subscriptions: Vec<KeyPattern>,
}

impl KnowledgeBase {
    pub fn new(owner: AgentId) -> Self {
        Self { owner, entries: BTreeMap::new(), subscriptions: Vec::new() }
    }

    pub fn owner(&self) -> &AgentId {
        &self.owner
    }

    pub fn subscribe(&mut self, pattern: KeyPattern) {
        if !self.subscriptions.contains(&pattern) {
            self.subscriptions.push(pattern);
        }
    }

    pub fn subscriptions(&self) -> &[KeyPattern] {
        &self.subscriptions
    }

    /// True when a change to `key` must be forwarded to other agents.
    pub fn is_subscribed(&self, key: &str) -> bool {
        self.subscriptions.iter().any(|p| p.matches(key))
    }

    pub fn get(&self, key: &str) -> Option<&Belief> {
        self.entries.get(key)
    }

    pub fn value(&self, key: &str) -> Option<&BeliefValue> {
        self.entries.get(key).map(|b| &b.value)
    }

    pub fn entries(&self) -> impl Iterator<Item = &Belief> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All beliefs matching `pattern`, ordered by key.
    pub fn query(&self, pattern: &KeyPattern) -> Vec<&Belief> {
        self.entries.values().filter(|b| pattern.matches(&b.key)).collect()
    }

    /// Applies one belief under the conflict policy.
    ///
    /// Returns the belief-changed event when the stored belief changed, `None`
    /// for an identical assertion or one that loses arbitration. A repeated
    /// value with newer provenance still replaces the stored entry.
    pub fn assert_belief(&mut self, b: Belief, now: Tick) -> Result<Option<MissionEvent>, KbError> {
        b.validate()?;
        if b.tick > now {
            return Err(KbError::FutureTick { key: b.key, tick: b.tick, now });
        }
        let version = match self.entries.get(&b.key) {
            None => 1,
            Some(existing) => {
                if existing.same_content(&b) || b.precedence() < existing.precedence() {
                    return Ok(None);
                }
                existing.version + 1
            }
        };
        let stored = Belief { version, ..b };
        let payload = serde_json::to_value(&stored).expect("beliefs serialize");
        self.entries.insert(stored.key.clone(), stored);
        Ok(Some(MissionEvent::new(now, EventKind::BeliefChanged, Some(self.owner.clone()), payload)))
    }

    /// Applies a batch of remote beliefs. The outcome does not depend on
    /// batch order: each key keeps only the batch's highest-precedence entry.
    pub fn merge_remote(&mut self, incoming: Vec<Belief>, now: Tick) -> MergeReport {
        let mut report = MergeReport::default();
        let mut best: BTreeMap<String, Belief> = BTreeMap::new();
        for (i, b) in incoming.into_iter().enumerate() {
            if let Err(e) = b.validate() {
                report.rejected.push((i, e));
                continue;
            }
            if b.tick > now {
                report.rejected.push((i, KbError::FutureTick { key: b.key.clone(), tick: b.tick, now }));
                continue;
            }
            match best.get(&b.key) {
                Some(cur) if batch_order(&b, cur) != Ordering::Greater => {}
                _ => {
                    best.insert(b.key.clone(), b);
                }
            }
        }
        for (_, b) in best {
            match self.assert_belief(b, now) {
                Ok(Some(ev)) => report.events.push(ev),
                Ok(None) => {}
                Err(e) => unreachable!("batch entries were validated: {e}"),
            }
        }
        report
    }
}

/// Within one batch, precedence then canonical value breaks every tie.
fn batch_order(a: &Belief, b: &Belief) -> Ordering {
    a.precedence()
        .cmp(&b.precedence())
        .then_with(|| a.value.canonical().cmp(&b.value.canonical()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uav(n: u32) -> AgentId {
        AgentId(format!("UAV-{n}"))
    }

    fn pos_belief(key: &str, x: f64, y: f64, source: Source, tick: Tick) -> Belief {
        Belief::new(key, 1, BeliefValue::Position(Position::new(x, y)), source, tick)
    }

    #[test]
    fn insert_into_empty_store() {
        let mut kb = KnowledgeBase::new(uav(1));
        let ev = kb
            .assert_belief(pos_belief("victim.1.position", 120.0, 340.0, Source::Sensor(uav(1)), 0), 0)
            .unwrap();
        assert!(ev.is_some());
        assert_eq!(kb.get("victim.1.position").unwrap().version, 1);
    }

    #[test]
    fn identical_reassertion_is_a_no_op() {
        let mut kb = KnowledgeBase::new(uav(1));
        let b = pos_belief("victim.1.position", 120.0, 340.0, Source::Sensor(uav(1)), 3);
        kb.assert_belief(b.clone(), 3).unwrap();
        assert_eq!(kb.assert_belief(b, 3).unwrap(), None);
        assert_eq!(kb.get("victim.1.position").unwrap().version, 1);
    }

    #[test]
    fn newer_human_estimate_replaces_agent_estimate() {
        let mut kb = KnowledgeBase::new(uav(1));
        kb.assert_belief(Belief::new("boat.eta", 3, BeliefValue::Duration(420.0), Source::Agent(uav(2)), 40), 40)
            .unwrap();
        let ev = kb
            .assert_belief(
                Belief::new("boat.eta", 3, BeliefValue::Duration(300.0), Source::Human(OperatorId::from("ic")), 50),
                50,
            )
            .unwrap();
        assert!(ev.is_some());
        let b = kb.get("boat.eta").unwrap();
        assert_eq!(b.value, BeliefValue::Duration(300.0));
        assert_eq!(b.version, 2);
    }

    #[test]
    fn equal_tick_source_rank_then_origin() {
        let mut kb = KnowledgeBase::new(uav(1));
        let human = Belief::new("k", 2, BeliefValue::Scalar(1.0), Source::Human("ic".into()), 5);
        let agent = Belief::new("k", 2, BeliefValue::Scalar(2.0), Source::Agent(uav(2)), 5);
        kb.assert_belief(human, 5).unwrap();
        assert_eq!(kb.assert_belief(agent, 5).unwrap(), None);
        assert_eq!(kb.value("k"), Some(&BeliefValue::Scalar(1.0)));

        let mut kb = KnowledgeBase::new(uav(1));
        kb.assert_belief(Belief::new("k", 2, BeliefValue::Scalar(3.0), Source::Agent(uav(3)), 5), 5).unwrap();
        kb.assert_belief(Belief::new("k", 2, BeliefValue::Scalar(2.0), Source::Agent(uav(2)), 5), 5).unwrap();
        assert_eq!(kb.value("k"), Some(&BeliefValue::Scalar(2.0)), "lower origin id wins at equal rank");
    }

    #[test]
    fn stale_assertion_loses() {
        let mut kb = KnowledgeBase::new(uav(1));
        kb.assert_belief(Belief::new("k", 1, BeliefValue::Scalar(1.0), Source::Sensor(uav(1)), 9), 9).unwrap();
        let ev = kb.assert_belief(Belief::new("k", 1, BeliefValue::Scalar(5.0), Source::Human("ic".into()), 4), 9);
        assert_eq!(ev.unwrap(), None);
        assert_eq!(kb.value("k"), Some(&BeliefValue::Scalar(1.0)));
    }

    #[test]
    fn malformed_level_rejected() {
        let mut kb = KnowledgeBase::new(uav(1));
        let err = kb.assert_belief(Belief::new("k", 4, BeliefValue::Boolean(true), Source::Sensor(uav(1)), 0), 0);
        assert!(matches!(err, Err(KbError::MalformedBelief { .. })));
        let err = kb.assert_belief(Belief::new("k", 0, BeliefValue::Boolean(true), Source::Sensor(uav(1)), 0), 0);
        assert!(matches!(err, Err(KbError::MalformedBelief { .. })));
    }

    #[test]
    fn query_by_prefix_exact_and_empty() {
        let mut kb = KnowledgeBase::new(uav(1));
        assert!(kb.query(&KeyPattern::parse("victim.*").unwrap()).is_empty());
        kb.assert_belief(pos_belief("victim.1.position", 1.0, 2.0, Source::Sensor(uav(1)), 0), 0).unwrap();
        kb.assert_belief(Belief::new("boat.eta", 3, BeliefValue::Duration(300.0), Source::Human("ic".into()), 0), 0)
            .unwrap();
        assert_eq!(kb.query(&KeyPattern::parse("victim.*").unwrap()).len(), 1);
        let exact = kb.query(&KeyPattern::parse("boat.eta").unwrap());
        assert_eq!(exact.len(), 1);
        assert_eq!(exact[0].key, "boat.eta");
        assert_eq!(kb.query(&KeyPattern::parse("*").unwrap()).len(), 2);
    }

    #[test]
    fn pattern_rejects_inner_wildcards() {
        assert!(KeyPattern::parse("victim.*.position").is_err());
        assert!(KeyPattern::parse("vic*").is_err());
        assert!(KeyPattern::parse("a..b").is_err());
        assert!(!KeyPattern::parse("victim.*").unwrap().matches("victim"));
    }

    #[test]
    fn merge_adopts_newer_remote_value() {
        let mut kb = KnowledgeBase::new(uav(1));
        kb.assert_belief(pos_belief("victim.1.position", 0.0, 0.0, Source::Sensor(uav(1)), 50), 50).unwrap();
        let report =
            kb.merge_remote(vec![pos_belief("victim.1.position", 9.0, 9.0, Source::Sensor(uav(2)), 60)], 60);
        assert_eq!(report.events.len(), 1);
        assert_eq!(kb.value("victim.1.position"), Some(&BeliefValue::Position(Position::new(9.0, 9.0))));
    }

    #[test]
    fn merge_empty_is_identity() {
        let mut kb = KnowledgeBase::new(uav(1));
        kb.assert_belief(pos_belief("a", 0.0, 0.0, Source::Sensor(uav(1)), 0), 0).unwrap();
        let before = kb.clone();
        let report = kb.merge_remote(vec![], 3);
        assert!(report.events.is_empty());
        assert_eq!(kb, before);
    }

    #[test]
    fn merge_is_batch_order_independent() {
        let a = Belief::new("k", 1, BeliefValue::Scalar(10.0), Source::Sensor(uav(2)), 10);
        let b = Belief::new("k", 1, BeliefValue::Scalar(20.0), Source::Sensor(uav(3)), 20);
        for batch in [vec![a.clone(), b.clone()], vec![b.clone(), a.clone()]] {
            let mut kb = KnowledgeBase::new(uav(1));
            kb.merge_remote(batch, 20);
            assert_eq!(kb.value("k"), Some(&BeliefValue::Scalar(20.0)));
        }
    }

    #[test]
    fn merge_reports_malformed_without_aborting() {
        let mut kb = KnowledgeBase::new(uav(1));
        let bad = Belief::new("bad", 7, BeliefValue::Scalar(1.0), Source::Sensor(uav(2)), 0);
        let good = Belief::new("good", 2, BeliefValue::Scalar(1.0), Source::Sensor(uav(2)), 0);
        let report = kb.merge_remote(vec![bad, good], 0);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].0, 0);
        assert!(kb.get("good").is_some());
    }
}
