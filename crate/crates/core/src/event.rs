//! The mission event record and its canonical JSON form.
//!
//! Every observable engine behavior is a [`MissionEvent`]. The log is written
//! one canonical JSON object per line: keys sorted, no insignificant
//! whitespace, and every non-integer number printed with exactly six decimals.
//! Two runs with the same inputs therefore produce byte-identical files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::types::{AgentId, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    BeliefChanged,
    GoalAdopted,
    GoalDropped,
    GoalSuspended,
    GoalResumed,
    PlanSelected,
    PlanFailed,
    PermissionChanged,
    InteractionReceived,
    ConfirmationOpened,
    ConfirmationAnswered,
    DecisionLogged,
    Detection,
    ActionExecuted,
    Error,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::BeliefChanged => "belief-changed",
            EventKind::GoalAdopted => "goal-adopted",
            EventKind::GoalDropped => "goal-dropped",
            EventKind::GoalSuspended => "goal-suspended",
            EventKind::GoalResumed => "goal-resumed",
            EventKind::PlanSelected => "plan-selected",
            EventKind::PlanFailed => "plan-failed",
            EventKind::PermissionChanged => "permission-changed",
            EventKind::InteractionReceived => "interaction-received",
            EventKind::ConfirmationOpened => "confirmation-opened",
            EventKind::ConfirmationAnswered => "confirmation-answered",
            EventKind::DecisionLogged => "decision-logged",
            EventKind::Detection => "detection",
            EventKind::ActionExecuted => "action-executed",
            EventKind::Error => "error",
        }
    }
}

/// One entry of the append-only mission log.
///
/// `seq` is assigned when the event is appended to a [`EventLog`]; events
/// produced by pure operations carry `seq == 0` until then.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionEvent {
    pub seq: u64,
    pub tick: Tick,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
    pub payload: Value,
}

impl MissionEvent {
    pub fn new(tick: Tick, kind: EventKind, agent: Option<AgentId>, payload: Value) -> Self {
        Self { seq: 0, tick, kind, agent, payload }
    }

    pub fn error(tick: Tick, agent: Option<AgentId>, code: &str, message: impl Into<String>) -> Self {
        Self::new(
            tick,
            EventKind::Error,
            agent,
            serde_json::json!({ "code": code, "message": message.into() }),
        )
    }

    /// Payload field as a string, if present.
    pub fn str_field(&self, name: &str) -> Option<&str> {
        self.payload.get(name).and_then(Value::as_str)
    }

    pub fn to_canonical_line(&self) -> String {
        let value = serde_json::to_value(self).expect("mission events always serialize");
        canonical_string(&value)
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Append-only event sequence with strictly increasing `seq` starting at 1.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Vec<MissionEvent>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, mut ev: MissionEvent) -> u64 {
        let seq = self.events.len() as u64 + 1;
        if let Some(last) = self.events.last() {
            debug_assert!(ev.tick >= last.tick, "event ticks must be non-decreasing");
        }
        ev.seq = seq;
        self.events.push(ev);
        seq
    }

    pub fn extend(&mut self, evs: impl IntoIterator<Item = MissionEvent>) {
        for ev in evs {
            self.append(ev);
        }
    }

    pub fn events(&self) -> &[MissionEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    /// Events with `seq >= from_seq`, in order.
    pub fn since(&self, from_seq: u64) -> &[MissionEvent] {
        let start = from_seq.saturating_sub(1) as usize;
        self.events.get(start..).unwrap_or(&[])
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&ev.to_canonical_line());
            out.push('\n');
        }
        out
    }
}

/// Renders a JSON value canonically: sorted keys, compact, fixed 6-decimal floats.
pub fn canonical_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(n, out),
        Value::String(s) => write_str(s, out),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => write_object(map, out),
    }
}

fn write_object(map: &Map<String, Value>, out: &mut String) {
    let mut keys: Vec<&String> = map.keys().collect();
    keys.sort();
    out.push('{');
    for (i, k) in keys.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_str(k, out);
        out.push(':');
        write_value(&map[k], out);
    }
    out.push('}');
}

fn write_number(n: &Number, out: &mut String) {
    if let Some(i) = n.as_i64() {
        let _ = write!(out, "{i}");
    } else if let Some(u) = n.as_u64() {
        let _ = write!(out, "{u}");
    } else {
        let f = n.as_f64().unwrap_or(0.0);
        let _ = write!(out, "{f:.6}");
    }
}

fn write_str(s: &str, out: &mut String) {
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_sorts_keys_and_fixes_floats() {
        let v = json!({"b": 1.5, "a": [1, 2.0, "x"], "c": {"z": null, "y": true}});
        assert_eq!(
            canonical_string(&v),
            r#"{"a":[1,2.000000,"x"],"b":1.500000,"c":{"y":true,"z":null}}"#
        );
    }

    #[test]
    fn canonical_is_a_fixed_point_after_reparse() {
        let v = json!({"x": 20.4 - 0.5, "y": -0.0000001, "n": 7});
        let once = canonical_string(&v);
        let reparsed: Value = serde_json::from_str(&once).unwrap();
        assert_eq!(canonical_string(&reparsed), once);
    }

    #[test]
    fn log_assigns_monotone_seq() {
        let mut log = EventLog::new();
        let a = log.append(MissionEvent::new(0, EventKind::Error, None, json!({})));
        let b = log.append(MissionEvent::new(1, EventKind::Error, None, json!({})));
        assert_eq!((a, b), (1, 2));
        assert_eq!(log.since(2).len(), 1);
        assert_eq!(log.since(1).len(), 2);
        assert!(log.since(5).is_empty());
    }
}
