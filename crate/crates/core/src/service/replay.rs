//! Log folding, replay and byte-exact verification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::autonomy::{Permission, Scope};
use crate::bdi::GoalState;
use crate::event::{canonical_string, EventKind, MissionEvent};
use crate::interaction::{ExplanationRecord, HumanInteraction, RequestState, Subject};
use crate::kb::Belief;
use crate::sim::ScenarioSpec;
use crate::types::{AgentId, DecisionId, GoalId, RequestId, Tick};

use super::mission::{run_headless, Mission, MissionError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalView {
    pub name: String,
    pub state: GoalState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestView {
    pub agent: AgentId,
    pub subject: Subject,
    pub state: RequestState,
}

/// The observable mission state. Both the live engine and a log fold produce
/// one; equal logs produce equal snapshots.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MissionSnapshot {
    pub seq: u64,
    pub tick: Tick,
    pub beliefs: BTreeMap<AgentId, BTreeMap<String, Belief>>,
    pub goals: BTreeMap<AgentId, BTreeMap<GoalId, GoalView>>,
    pub modes: BTreeMap<AgentId, String>,
    pub permissions: Vec<Permission>,
    pub requests: BTreeMap<RequestId, RequestView>,
    pub decisions: BTreeMap<DecisionId, ExplanationRecord>,
}

impl MissionSnapshot {
    pub fn to_canonical(&self) -> String {
        canonical_string(&serde_json::to_value(self).expect("snapshots serialize"))
    }

    /// Folds one event. Malformed payloads are reported, not skipped.
    pub fn apply(&mut self, ev: &MissionEvent) -> Result<(), String> {
        self.seq = ev.seq;
        self.tick = ev.tick;
        let agent = || ev.agent.clone().ok_or_else(|| format!("{} event without agent", ev.kind.as_str()));
        let field = |name: &str| -> Result<Value, String> {
            ev.payload.get(name).cloned().ok_or_else(|| format!("{} event without `{name}`", ev.kind.as_str()))
        };
        fn parse<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, String> {
            serde_json::from_value(v).map_err(|e| e.to_string())
        }
        match ev.kind {
            EventKind::BeliefChanged => {
                let b: Belief = parse(ev.payload.clone())?;
                self.beliefs.entry(agent()?).or_default().insert(b.key.clone(), b);
            }
            EventKind::GoalAdopted => {
                let id: GoalId = parse(field("goal")?)?;
                let name: String = parse(field("name")?)?;
                self.goals.entry(agent()?).or_default().insert(id, GoalView { name, state: GoalState::Active });
            }
            EventKind::GoalDropped | EventKind::GoalSuspended | EventKind::GoalResumed => {
                let id: GoalId = parse(field("goal")?)?;
                let state = match ev.kind {
                    EventKind::GoalSuspended => GoalState::Suspended,
                    EventKind::GoalResumed => GoalState::Active,
                    _ => match ev.str_field("reason") {
                        Some("achieved") => GoalState::Achieved,
                        _ => GoalState::Aborted,
                    },
                };
                let goal = self
                    .goals
                    .entry(agent()?)
                    .or_default()
                    .get_mut(&id)
                    .ok_or_else(|| format!("{} for unknown goal {id}", ev.kind.as_str()))?;
                goal.state = state;
            }
            EventKind::ActionExecuted => {
                if ev.str_field("action") == Some("set-mode") {
                    let mode: String = parse(field("mode")?)?;
                    self.modes.insert(agent()?, mode);
                }
            }
            EventKind::PermissionChanged => {
                let key: String = parse(field("key")?)?;
                let scope: Scope = parse(field("scope")?)?;
                let new = field("new")?;
                let p = Permission {
                    key,
                    granted: parse(new.get("granted").cloned().unwrap_or(Value::Null))?,
                    constraint: parse(new.get("constraint").cloned().unwrap_or(Value::Null))?,
                    scope,
                };
                self.permissions.retain(|x| !(x.scope == p.scope && x.key == p.key));
                self.permissions.push(p);
                self.permissions.sort_by(|a, b| (&a.scope, &a.key).cmp(&(&b.scope, &b.key)));
            }
            EventKind::ConfirmationOpened => {
                let id: RequestId = parse(field("request")?)?;
                let view = RequestView { agent: parse(field("agent")?)?, subject: parse(field("subject")?)?, state: RequestState::Open };
                self.requests.insert(id, view);
            }
            EventKind::ConfirmationAnswered => {
                let id: RequestId = parse(field("request")?)?;
                let state: RequestState = parse(field("state")?)?;
                self.requests.get_mut(&id).ok_or_else(|| format!("answer for unknown request {id}"))?.state = state;
            }
            EventKind::DecisionLogged => {
                let rec: ExplanationRecord = parse(ev.payload.clone())?;
                self.decisions.insert(rec.decision.clone(), rec);
            }
            _ => {}
        }
        Ok(())
    }
}

impl Mission {
    /// Snapshot of the live engine state, comparable with a log fold.
    pub fn snapshot(&self) -> MissionSnapshot {
        let mut permissions: Vec<Permission> = self.permissions.overrides().values().cloned().collect();
        permissions.sort_by(|a, b| (&a.scope, &a.key).cmp(&(&b.scope, &b.key)));
        MissionSnapshot {
            seq: self.log.last_seq(),
            tick: self.log.events().last().map_or(0, |e| e.tick),
            beliefs: self
                .agents
                .iter()
                .filter(|(_, a)| !a.kb.is_empty())
                .map(|(id, a)| (id.clone(), a.kb.entries().map(|b| (b.key.clone(), b.clone())).collect()))
                .collect(),
            goals: self
                .agents
                .iter()
                .filter(|(_, a)| !a.goals.is_empty())
                .map(|(id, a)| {
                    let goals = a.goals.iter().map(|g| (g.id.clone(), GoalView { name: g.name.clone(), state: g.state })).collect();
                    (id.clone(), goals)
                })
                .collect(),
            modes: self.world.uavs.iter().map(|(id, u)| (id.clone(), u.mode.clone())).collect(),
            permissions,
            requests: self
                .requests
                .iter()
                .map(|r| (r.request.clone(), RequestView { agent: r.agent.clone(), subject: r.subject.clone(), state: r.state }))
                .collect(),
            decisions: self.decisions.clone(),
        }
    }

    /// JSON view served to operator consoles.
    pub fn state_view(&self) -> Value {
        let snap = self.snapshot();
        let agents: BTreeMap<String, Value> = self
            .agents
            .iter()
            .map(|(id, a)| {
                let uav = &self.world.uavs[id];
                let intentions: Vec<Value> = a
                    .intentions
                    .iter()
                    .map(|i| json!({ "id": i.id, "goal": i.goal, "plan": i.plan, "step": i.pc, "status": i.status }))
                    .collect();
                (
                    id.to_string(),
                    json!({
                        "position": uav.position,
                        "battery": uav.battery,
                        "mode": uav.mode,
                        "landed": uav.landed,
                        "role": a.role.name,
                        "permissions": a.role.permissions,
                        "intentions": intentions,
                    }),
                )
            })
            .collect();
        json!({
            "scenario": self.spec.name,
            "status": self.status,
            "next_tick": self.next_tick,
            "seq": snap.seq,
            "agents": agents,
            "victims": self.world.victims,
            "regions": self.world.regions,
            "coverage": self.world.coverage,
            "snapshot": snap,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ReplayError {
    pub line: usize,
    pub message: String,
}

/// A parsed log with random access to the state at any seq.
#[derive(Debug, Clone)]
pub struct Replay {
    events: Vec<MissionEvent>,
    last: MissionSnapshot,
}

impl Replay {
    pub fn events(&self) -> &[MissionEvent] {
        &self.events
    }

    /// State after folding every event with `seq <= seq`.
    pub fn snapshot_at(&self, seq: u64) -> MissionSnapshot {
        let idx = self.events.partition_point(|e| e.seq <= seq);
        let mut state = MissionSnapshot::default();
        for ev in &self.events[..idx] {
            state.apply(ev).expect("events were folded once already");
        }
        state
    }

    pub fn final_snapshot(&self) -> MissionSnapshot {
        self.last.clone()
    }

    /// Operator interactions in admission order, stamped with their arrival tick.
    pub fn transcript(&self) -> Vec<HumanInteraction> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::InteractionReceived && e.str_field("origin") == Some("operator"))
            .filter_map(|e| serde_json::from_value::<HumanInteraction>(e.payload.get("interaction")?.clone()).ok())
            .collect()
    }
}

/// Parses and folds a JSONL log, checking seq and tick ordering.
pub fn replay(text: &str) -> Result<Replay, ReplayError> {
    let mut events: Vec<MissionEvent> = Vec::new();
    let mut state = MissionSnapshot::default();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ev = MissionEvent::from_line(line).map_err(|e| ReplayError { line: n, message: e.to_string() })?;
        if let Some(prev) = events.last() {
            if ev.seq <= prev.seq {
                return Err(ReplayError { line: n, message: format!("seq {} does not follow {}", ev.seq, prev.seq) });
            }
            if ev.tick < prev.tick {
                return Err(ReplayError { line: n, message: format!("tick {} precedes {}", ev.tick, prev.tick) });
            }
        }
        state.apply(&ev).map_err(|message| ReplayError { line: n, message })?;
        events.push(ev);
    }
    Ok(Replay { events, last: state })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Mission(#[from] MissionError),
}

/// Outcome of re-running a scenario against a recorded log.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub identical: bool,
    /// 1-based line of the first difference.
    pub first_difference: Option<usize>,
    pub recorded_lines: usize,
    pub rerun_lines: usize,
}

/// Re-runs `spec` with the operator transcript recovered from `log` and compares bytes.
pub fn verify(spec: ScenarioSpec, log: &str, max_ticks: Option<Tick>) -> Result<Verification, VerifyError> {
    let recorded = replay(log)?;
    let rerun = run_headless(spec, recorded.transcript(), max_ticks)?.to_jsonl();
    let a: Vec<&str> = log.lines().collect();
    let b: Vec<&str> = rerun.lines().collect();
    let first_difference = (0..a.len().max(b.len())).find(|&i| a.get(i) != b.get(i)).map(|i| i + 1);
    Ok(Verification {
        identical: log == rerun,
        first_difference,
        recorded_lines: a.len(),
        rerun_lines: b.len(),
    })
}
