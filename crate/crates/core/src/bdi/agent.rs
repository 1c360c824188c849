//! Agent state and the per-tick reasoning step.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autonomy::Role;
use crate::event::{EventKind, MissionEvent};
use crate::interaction::{CandidateRecord, Command, DecisionKind, ExplanationRecord, InputRead, Subject};
use crate::kb::{Belief, BeliefValue, KnowledgeBase};
use crate::types::{AgentId, DecisionId, GoalId, Position, RequestId, Tick};

use super::dispatch::{evaluate_plans, select_plan, MetaPolicy};
use super::plan::{bind_template, Amount, MoveTarget, PlanSpec, PlanStep, SubjectTemplate};
use super::{
    BdiError, BdiEvent, BdiEventKind, DropReason, GoalInstance, GoalState, GoalType, Intention, IntentionStatus,
    WaitOn,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capability {
    Camera,
    Thermal,
    FlotationPayload,
    LaserMarker,
}

impl Capability {
    pub fn sensor(name: &str) -> Option<Capability> {
        match name {
            "camera" => Some(Capability::Camera),
            "thermal" => Some(Capability::Thermal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub width: f64,
    pub height: f64,
}

impl Bounds {
    pub fn contains(&self, p: &Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }
}

/// Static facts about the airframe that the reasoning step may consult.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentProfile {
    pub capabilities: BTreeSet<Capability>,
    pub bounds: Bounds,
    pub launch: Position,
    pub arrival_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    MoveTo(Position),
    SetMode(String),
    Deliver(String),
    Land,
    ReturnToLaunch,
    Hold,
    Capture { sensor: Capability, subject: Option<String> },
}

/// Action handed to the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveAction {
    pub agent: AgentId,
    pub kind: ActionKind,
}

/// Requests the reasoning step makes of the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Broadcast(Belief),
    OpenConfirmation { intention: String, subject: Subject },
    RequestReplacement { intention: String },
    GoalAdopted(GoalInstance),
}

#[derive(Debug, Clone, Default)]
pub struct StepOutput {
    pub actions: Vec<PrimitiveAction>,
    pub effects: Vec<Effect>,
    pub events: Vec<MissionEvent>,
    pub decisions: Vec<ExplanationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub role: Role,
    pub kb: KnowledgeBase,
    pub library: Vec<PlanSpec>,
    pub goals: Vec<GoalInstance>,
    pub intentions: Vec<Intention>,
    pub queue: VecDeque<BdiEvent>,
    pub profile: AgentProfile,
    goal_seq: u64,
    intention_seq: u64,
    decision_seq: u64,
}

impl AgentState {
    pub fn new(id: AgentId, role: Role, profile: AgentProfile, library: Vec<PlanSpec>) -> Self {
        let kb = KnowledgeBase::new(id.clone());
        Self {
            id,
            role,
            kb,
            library,
            goals: Vec::new(),
            intentions: Vec::new(),
            queue: VecDeque::new(),
            profile,
            goal_seq: 0,
            intention_seq: 0,
            decision_seq: 0,
        }
    }

    pub fn goal(&self, id: &GoalId) -> Option<&GoalInstance> {
        self.goals.iter().find(|g| &g.id == id)
    }

    fn goal_mut(&mut self, id: &GoalId) -> Option<&mut GoalInstance> {
        self.goals.iter_mut().find(|g| &g.id == id)
    }

    pub fn active_goals(&self) -> impl Iterator<Item = &GoalInstance> {
        self.goals.iter().filter(|g| g.state == GoalState::Active)
    }

    pub fn has_live_intention(&self, goal: &GoalId) -> bool {
        self.intentions.iter().any(|i| &i.goal == goal && i.is_live())
    }

    /// True when the agent has nothing left to do this mission.
    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && !self.intentions.iter().any(Intention::is_live)
    }

    pub fn self_position(&self) -> Option<Position> {
        self.kb.value("self.position").and_then(BeliefValue::as_position)
    }

    pub fn next_goal_id(&mut self) -> GoalId {
        self.goal_seq += 1;
        GoalId(format!("{}/g{}", self.id, self.goal_seq))
    }

    fn next_decision_id(&mut self) -> DecisionId {
        self.decision_seq += 1;
        DecisionId(format!("{}-d{}", self.id, self.decision_seq))
    }

    /// Enqueues unconditionally.
    pub fn enqueue(&mut self, ev: BdiEvent) {
        self.queue.push_back(ev);
    }

    /// Enqueues belief and goal-dropped events only when some plan could react to them.
    pub fn notify(&mut self, ev: BdiEvent) {
        let relevant = match ev.kind {
            BdiEventKind::BeliefChanged { .. } | BdiEventKind::GoalDropped { .. } => {
                self.library.iter().any(|p| super::dispatch::trigger_matches(&p.trigger, &ev))
            }
            _ => true,
        };
        if relevant {
            self.queue.push_back(ev);
        }
    }

    /// Notifies the agent of a belief change event produced by its own knowledge base.
    pub fn notify_belief(&mut self, ev: &MissionEvent) {
        if let Some(key) = ev.str_field("key") {
            let mut bdi = BdiEvent::new(BdiEventKind::BeliefChanged { key: key.to_string() }, ev.tick, self.id.clone())
                .with_param("key", BeliefValue::Text(key.to_string()));
            if let Some(v) = self.kb.value(key) {
                bdi = bdi.with_param("value", v.clone());
            }
            self.notify(bdi);
        }
    }

    fn goal_event(&self, kind: EventKind, g: &GoalInstance, tick: Tick, extra: Option<(&str, &str)>) -> MissionEvent {
        let mut payload = json!({ "goal": g.id, "name": g.name });
        if kind == EventKind::GoalAdopted {
            payload["type"] = json!(g.goal_type);
            payload["params"] = json!(g.params);
        }
        if let Some((k, v)) = extra {
            payload[k] = json!(v);
        }
        MissionEvent::new(tick, kind, Some(self.id.clone()), payload)
    }

    /// Adds an active goal and enqueues its goal-adopted event.
    pub fn adopt_goal(&mut self, g: GoalInstance, tick: Tick) -> Result<MissionEvent, BdiError> {
        if self.goals.iter().any(|x| x.id == g.id && !x.state.is_terminal()) {
            return Err(BdiError::DuplicateGoal(g.id));
        }
        let mut g = g;
        g.state = GoalState::Active;
        let mut ev = BdiEvent::new(BdiEventKind::GoalAdopted { goal: g.id.clone(), name: g.name.clone() }, tick, self.id.clone());
        ev.params = g.params.clone();
        let me = self.goal_event(EventKind::GoalAdopted, &g, tick, None);
        self.goals.retain(|x| x.id != g.id);
        self.goals.push(g);
        self.queue.push_back(ev);
        Ok(me)
    }

    /// Moves a goal to a terminal state and cancels its intentions.
    pub fn drop_goal(&mut self, id: &GoalId, reason: DropReason, tick: Tick) -> Result<Vec<MissionEvent>, BdiError> {
        let target: GoalState = reason.into();
        let g = self.goal(id).ok_or_else(|| BdiError::NoSuchGoal(id.clone()))?;
        if !g.state.can_become(target) {
            return Err(BdiError::InvalidTransition { goal: id.clone(), from: g.state, to: target });
        }
        let mut events = Vec::new();
        let live: Vec<usize> = (0..self.intentions.len())
            .filter(|&i| &self.intentions[i].goal == id && self.intentions[i].is_live())
            .collect();
        for i in live {
            let status = if reason == DropReason::Achieved { IntentionStatus::Done } else { IntentionStatus::Cancelled };
            self.end_intention(i, status, tick, &mut events);
        }
        let g = self.goal_mut(id).expect("checked above");
        g.state = target;
        let g = g.clone();
        let reason_str = match reason {
            DropReason::Achieved => "achieved",
            DropReason::Aborted => "aborted",
        };
        events.insert(0, self.goal_event(EventKind::GoalDropped, &g, tick, Some(("reason", reason_str))));
        let mut ev = BdiEvent::new(BdiEventKind::GoalDropped { goal: g.id.clone(), name: g.name.clone() }, tick, self.id.clone());
        ev.params = g.params.clone();
        self.notify(ev);
        Ok(events)
    }

    pub fn suspend_goal(&mut self, id: &GoalId, tick: Tick) -> Result<MissionEvent, BdiError> {
        self.transition(id, GoalState::Suspended, EventKind::GoalSuspended, tick)
    }

    pub fn resume_goal(&mut self, id: &GoalId, tick: Tick) -> Result<MissionEvent, BdiError> {
        self.transition(id, GoalState::Active, EventKind::GoalResumed, tick)
    }

    fn transition(&mut self, id: &GoalId, to: GoalState, kind: EventKind, tick: Tick) -> Result<MissionEvent, BdiError> {
        let g = self.goal_mut(id).ok_or_else(|| BdiError::NoSuchGoal(id.clone()))?;
        if !g.state.can_become(to) {
            return Err(BdiError::InvalidTransition { goal: id.clone(), from: g.state, to });
        }
        g.state = to;
        let g = g.clone();
        Ok(self.goal_event(kind, &g, tick, None))
    }

    /// Suspends every active goal with the given name.
    pub fn suspend_goals_named(&mut self, name: &str, tick: Tick) -> Vec<MissionEvent> {
        let ids: Vec<GoalId> = self.active_goals().filter(|g| g.name == name).map(|g| g.id.clone()).collect();
        ids.iter().filter_map(|id| self.suspend_goal(id, tick).ok()).collect()
    }

    /// Replaces named parameters of a goal (by id) or a plan (by id), atomically.
    pub fn apply_feedback(&mut self, target: &str, updates: &BTreeMap<String, f64>) -> Result<(), BdiError> {
        if let Some(g) = self.goals.iter_mut().find(|g| g.id.as_str() == target) {
            if let Some(bad) = updates.keys().find(|k| !g.params.contains_key(*k)) {
                return Err(BdiError::UnknownParameter { target: target.into(), param: bad.clone() });
            }
            for (k, v) in updates {
                let slot = g.params.get_mut(k).expect("checked");
                *slot = match slot {
                    BeliefValue::Duration(_) => BeliefValue::Duration(*v),
                    _ => BeliefValue::Scalar(*v),
                };
            }
            return Ok(());
        }
        if let Some(p) = self.library.iter_mut().find(|p| p.id.as_str() == target) {
            if let Some(bad) = updates.keys().find(|k| !p.parameters.contains_key(*k)) {
                return Err(BdiError::UnknownParameter { target: target.into(), param: bad.clone() });
            }
            for (k, v) in updates {
                p.parameters.insert(k.clone(), *v);
            }
            return Ok(());
        }
        Err(BdiError::NoSuchTarget(target.into()))
    }

    /// Largest value of a plan parameter among the agent's live intentions.
    pub fn live_parameter(&self, name: &str) -> Option<f64> {
        self.intentions
            .iter()
            .filter(|i| i.is_live())
            .filter(|i| self.goal(&i.goal).is_some_and(|g| g.state == GoalState::Active))
            .filter_map(|i| self.library.iter().find(|p| p.id == i.plan))
            .filter_map(|p| p.parameters.get(name).copied())
            .reduce(f64::min)
    }

    pub fn bind_request(&mut self, intention: &str, request: &RequestId) {
        for it in self.intentions.iter_mut().filter(|i| i.id == intention) {
            if it.status == IntentionStatus::Blocked(WaitOn::Request(None)) {
                it.status = IntentionStatus::Blocked(WaitOn::Request(Some(request.clone())));
            }
        }
    }

    /// Unblocks intentions waiting on `request`; true if any was waiting.
    pub fn release_request(&mut self, request: &RequestId) -> bool {
        let mut any = false;
        for it in &mut self.intentions {
            if matches!(&it.status, IntentionStatus::Blocked(WaitOn::Request(Some(r))) if r == request) {
                it.status = IntentionStatus::Running;
                any = true;
            }
        }
        any
    }

    /// Abandons intentions waiting on an expired request and raises `confirmation_expired`.
    pub fn expire_request(&mut self, request: &RequestId, tick: Tick) -> Vec<MissionEvent> {
        let mut events = Vec::new();
        let goals: Vec<GoalId> = self
            .intentions
            .iter()
            .filter(|i| matches!(&i.status, IntentionStatus::Blocked(WaitOn::Request(Some(r))) if r == request))
            .map(|i| i.goal.clone())
            .collect();
        let mut params = BTreeMap::new();
        for g in &goals {
            if let Some(goal) = self.goal(g) {
                params.extend(goal.params.clone());
            }
            if let Ok(evs) = self.drop_goal(g, DropReason::Aborted, tick) {
                events.extend(evs);
            }
        }
        let mut ev = BdiEvent::signal("confirmation_expired", tick, &self.id)
            .with_param("request", BeliefValue::Identifier(request.to_string()));
        ev.params.extend(params);
        self.enqueue(ev);
        events
    }

    /// Unblocks intentions waiting on a replacement handover.
    pub fn release_replacement(&mut self) -> bool {
        let mut any = false;
        for it in &mut self.intentions {
            if it.status == IntentionStatus::Blocked(WaitOn::Replacement) {
                it.status = IntentionStatus::Running;
                any = true;
            }
        }
        any
    }

    /// One reasoning cycle: consume at most one event, dispatch it, then
    /// advance every live intention of an active goal by one step.
    pub fn reasoning_step(&mut self, tick: Tick, policy: &dyn MetaPolicy) -> StepOutput {
        let mut out = StepOutput::default();
        if let Some(ev) = self.queue.pop_front() {
            self.dispatch(ev, tick, policy, &mut out);
        }
        let n = self.intentions.len();
        for i in 0..n {
            self.advance(i, tick, &mut out);
        }
        self.intentions.retain(Intention::is_live);
        out
    }

    fn dispatch(&mut self, ev: BdiEvent, tick: Tick, policy: &dyn MetaPolicy, out: &mut StepOutput) {
        if let BdiEventKind::GoalAdopted { goal, .. } = &ev.kind {
            let pending = self.goal(goal).is_some_and(|g| g.state == GoalState::Active) && !self.has_live_intention(goal);
            if !pending {
                return;
            }
        }
        let builtin = match &ev.kind {
            BdiEventKind::CommandReceived { command, .. } => {
                self.apply_command(command, &ev, tick, out);
                true
            }
            BdiEventKind::FeedbackReceived { request, .. } => self.release_request(request),
            _ => false,
        };

        let evals = evaluate_plans(&self.library, &ev, &self.kb, &self.role);
        let applicable: Vec<&PlanSpec> =
            self.library.iter().filter(|p| evals.iter().any(|e| e.applicable && e.plan == p.id)).collect();
        let chosen = select_plan(&applicable, policy, &self.kb).cloned();
        let n_applicable = applicable.len();

        let Some(chosen) = chosen else {
            if !builtin {
                let rec = self.record(DecisionKind::UnhandledEvent, &ev, &evals, None, tick);
                out.events.push(decision_event(&rec));
                out.decisions.push(rec);
            }
            return;
        };
        let decision = (n_applicable >= 2).then(|| {
            let rec = self.record(DecisionKind::PlanSelection, &ev, &evals, Some(chosen.id.to_string()), tick);
            out.events.push(decision_event(&rec));
            let id = rec.decision.clone();
            out.decisions.push(rec);
            id
        });
        let candidates: Vec<String> =
            evals.iter().filter(|e| e.applicable).map(|e| e.plan.to_string()).collect();
        self.start_intention(&chosen, ev, candidates, decision, tick, out);
    }

    fn record(
        &mut self,
        kind: DecisionKind,
        ev: &BdiEvent,
        evals: &[super::PlanEvaluation],
        chosen: Option<String>,
        tick: Tick,
    ) -> ExplanationRecord {
        let mut inputs: Vec<InputRead> = Vec::new();
        for e in evals {
            for i in &e.inputs {
                if !inputs.iter().any(|x| x.key == i.key) {
                    inputs.push(i.clone());
                }
            }
        }
        ExplanationRecord {
            decision: self.next_decision_id(),
            kind,
            agent: self.id.clone(),
            tick,
            event: ev.summary(),
            inputs,
            candidates: evals
                .iter()
                .map(|e| CandidateRecord { id: e.plan.to_string(), applicable: e.applicable, reason: e.reason.clone() })
                .collect(),
            chosen,
            rationale: String::new(),
        }
        .rendered()
    }

    fn adopt_new(&mut self, goal_type: GoalType, name: &str, params: BTreeMap<String, BeliefValue>, tick: Tick, out: &mut StepOutput) {
        let id = self.next_goal_id();
        let mut g = GoalInstance::new(id.as_str(), goal_type, name);
        g.params = params;
        if let Ok(ev) = self.adopt_goal(g.clone(), tick) {
            out.events.push(ev);
            out.effects.push(Effect::GoalAdopted(g));
        }
    }

    fn abort_goals(&mut self, filter: impl Fn(&GoalInstance) -> bool, tick: Tick, out: &mut StepOutput) {
        let ids: Vec<GoalId> =
            self.goals.iter().filter(|g| !g.state.is_terminal() && filter(g)).map(|g| g.id.clone()).collect();
        for id in ids {
            if let Ok(evs) = self.drop_goal(&id, DropReason::Aborted, tick) {
                out.events.extend(evs);
            }
        }
    }

    /// Commands manipulate goals directly before the event reaches the plan library.
    fn apply_command(&mut self, command: &Command, ev: &BdiEvent, tick: Tick, out: &mut StepOutput) {
        let mut params = ev.params.clone();
        match command {
            Command::Replace { victim } => {
                self.abort_goals(|_| true, tick, out);
                params.insert("victim".into(), BeliefValue::Identifier(victim.clone()));
                self.adopt_new(GoalType::Maintain, "track_victim", params, tick, out);
            }
            Command::Goto { position } => {
                self.abort_goals(|_| true, tick, out);
                params.insert("position".into(), BeliefValue::Position(*position));
                self.adopt_new(GoalType::Achieve, "goto", params, tick, out);
            }
            Command::Rtl => {
                self.abort_goals(|_| true, tick, out);
                self.adopt_new(GoalType::Perform, "return_to_launch", params, tick, out);
            }
            Command::StopTracking => {
                self.abort_goals(|g| g.name == "track_victim", tick, out);
            }
            Command::Deliver { payload } => {
                params.insert("payload".into(), BeliefValue::Text(payload.clone()));
                self.adopt_new(GoalType::Achieve, &format!("deliver_{payload}"), params, tick, out);
            }
            Command::SetRole { role } => {
                self.role.name = role.clone();
                out.actions.push(PrimitiveAction { agent: self.id.clone(), kind: ActionKind::SetMode(role.clone()) });
            }
            Command::Tune { target, updates } => {
                if let Err(e) = self.apply_feedback(target, updates) {
                    out.events.push(MissionEvent::error(tick, Some(self.id.clone()), "feedback-rejected", e.to_string()));
                }
            }
        }
    }

    fn start_intention(
        &mut self,
        plan: &PlanSpec,
        ev: BdiEvent,
        candidates: Vec<String>,
        decision: Option<DecisionId>,
        tick: Tick,
        out: &mut StepOutput,
    ) {
        let bound = match &ev.kind {
            BdiEventKind::GoalAdopted { goal, name } if *name == plan.goal => Some(goal.clone()),
            _ => self
                .goals
                .iter()
                .find(|g| {
                    g.name == plan.goal
                        && g.state == GoalState::Active
                        && ev.params.iter().all(|(k, v)| g.params.get(k).is_none_or(|gv| gv == v))
                })
                .map(|g| g.id.clone()),
        };
        let (goal_id, fresh) = match bound {
            Some(id) => (id, None),
            None => {
                let id = self.next_goal_id();
                let mut g = GoalInstance::new(id.as_str(), plan.goal_type, &plan.goal);
                g.params = ev.params.clone();
                (id, Some(g))
            }
        };

        out.events.push(MissionEvent::new(
            tick,
            EventKind::PlanSelected,
            Some(self.id.clone()),
            json!({
                "plan": plan.id,
                "goal": goal_id,
                "goal_name": plan.goal,
                "event": ev.summary(),
                "candidates": candidates,
                "decision": decision,
                "role": plan.role,
            }),
        ));

        if let Some(g) = fresh {
            out.events.push(self.goal_event(EventKind::GoalAdopted, &g, tick, None));
            out.effects.push(Effect::GoalAdopted(g.clone()));
            self.goals.push(g);
        }

        let live: Vec<usize> =
            (0..self.intentions.len()).filter(|&i| self.intentions[i].goal == goal_id && self.intentions[i].is_live()).collect();
        for i in live {
            self.end_intention(i, IntentionStatus::Cancelled, tick, &mut out.events);
        }
        let aborts = plan.aborts.clone();
        self.abort_goals(|g| g.id != goal_id && aborts.contains(&g.name), tick, out);

        let to_suspend: Vec<GoalId> = self
            .active_goals()
            .filter(|g| g.id != goal_id && plan.suspends.contains(&g.name))
            .map(|g| g.id.clone())
            .collect();
        for id in &to_suspend {
            if let Ok(e) = self.suspend_goal(id, tick) {
                out.events.push(e);
            }
        }

        if let Some(role) = &plan.role {
            if &self.role.name != role {
                self.role.name = role.clone();
                out.actions.push(PrimitiveAction { agent: self.id.clone(), kind: ActionKind::SetMode(role.clone()) });
            }
        }

        self.intention_seq += 1;
        self.intentions.push(Intention {
            id: format!("{}/i{}", self.id, self.intention_seq),
            goal: goal_id,
            plan: plan.id.clone(),
            pc: 0,
            status: IntentionStatus::Running,
            suspended: to_suspend,
            trigger: ev,
        });
    }

    fn end_intention(&mut self, i: usize, status: IntentionStatus, tick: Tick, events: &mut Vec<MissionEvent>) {
        let it = &mut self.intentions[i];
        if !it.is_live() {
            return;
        }
        it.status = status;
        let suspended = std::mem::take(&mut it.suspended);
        for g in suspended {
            if self.goal(&g).is_some_and(|x| x.state == GoalState::Suspended) {
                if let Ok(e) = self.resume_goal(&g, tick) {
                    events.push(e);
                }
            }
        }
    }

    fn advance(&mut self, i: usize, tick: Tick, out: &mut StepOutput) {
        let it = &self.intentions[i];
        if !it.is_live() {
            return;
        }
        let Some(goal) = self.goal(&it.goal).cloned() else { return };
        if goal.state != GoalState::Active {
            return;
        }
        if let IntentionStatus::Blocked(wait) = &it.status {
            let ready = match wait {
                WaitOn::Arrival(p) => self.self_position().is_some_and(|q| q.distance(p) <= self.profile.arrival_tolerance),
                WaitOn::Until(t) => tick >= *t,
                WaitOn::Request(_) | WaitOn::Replacement => false,
            };
            if !ready {
                if let WaitOn::Arrival(p) = wait {
                    out.actions.push(PrimitiveAction { agent: self.id.clone(), kind: ActionKind::MoveTo(*p) });
                }
                return;
            }
            self.intentions[i].status = IntentionStatus::Running;
        }
        let Some(plan) = self.library.iter().find(|p| p.id == self.intentions[i].plan).cloned() else {
            self.end_intention(i, IntentionStatus::Cancelled, tick, &mut out.events);
            return;
        };
        if self.intentions[i].pc >= plan.body.len() {
            if goal.goal_type == GoalType::Maintain {
                self.intentions[i].pc = 0;
            } else {
                let id = goal.id.clone();
                match self.drop_goal(&id, DropReason::Achieved, tick) {
                    Ok(evs) => out.events.extend(evs),
                    Err(_) => self.end_intention(i, IntentionStatus::Done, tick, &mut out.events),
                }
                return;
            }
        }
        let pc = self.intentions[i].pc;
        let step = plan.body[pc].clone();
        match self.execute(&step, &plan, &goal, i, tick, out) {
            Ok(wait) => {
                let it = &mut self.intentions[i];
                it.pc += 1;
                if let Some(w) = wait {
                    it.status = IntentionStatus::Blocked(w);
                }
            }
            Err(reason) => {
                let trigger = self.intentions[i].trigger.clone();
                self.end_intention(i, IntentionStatus::Cancelled, tick, &mut out.events);
                out.events.push(MissionEvent::new(
                    tick,
                    EventKind::PlanFailed,
                    Some(self.id.clone()),
                    json!({ "plan": plan.id, "goal": goal.id, "step": step.name(), "reason": reason }),
                ));
                let mut retry = trigger;
                retry.excluded.push(plan.id.clone());
                self.queue.push_back(retry);
            }
        }
    }

    fn execute(
        &mut self,
        step: &PlanStep,
        plan: &PlanSpec,
        goal: &GoalInstance,
        i: usize,
        tick: Tick,
        out: &mut StepOutput,
    ) -> Result<Option<WaitOn>, String> {
        let me = self.id.clone();
        let lookup = |name: &str| {
            if name == "self" {
                Some(me.to_string())
            } else {
                goal.params.get(name).map(BeliefValue::render)
            }
        };
        let act = |kind: ActionKind| PrimitiveAction { agent: self.id.clone(), kind };
        match step {
            PlanStep::MoveTo(target) => {
                let pos = match target {
                    MoveTarget::Fixed(p) => *p,
                    MoveTarget::Belief(key) => {
                        let key = bind_template(key, lookup)?;
                        self.kb
                            .value(&key)
                            .and_then(BeliefValue::as_position)
                            .ok_or_else(|| format!("no position known for {key}"))?
                    }
                    MoveTarget::Param(name) => goal
                        .params
                        .get(name)
                        .and_then(BeliefValue::as_position)
                        .ok_or_else(|| format!("goal has no position parameter {name}"))?,
                };
                if !self.profile.bounds.contains(&pos) {
                    return Err(format!("target {pos} outside world bounds"));
                }
                out.actions.push(act(ActionKind::MoveTo(pos)));
                Ok(Some(WaitOn::Arrival(pos)))
            }
            PlanStep::SetMode(mode) => {
                self.role.name = mode.clone();
                out.actions.push(act(ActionKind::SetMode(mode.clone())));
                Ok(None)
            }
            PlanStep::BroadcastBelief(key) => {
                let key = bind_template(key, lookup)?;
                let b = self.kb.get(&key).cloned().ok_or_else(|| format!("nothing to broadcast for {key}"))?;
                out.effects.push(Effect::Broadcast(b));
                Ok(None)
            }
            PlanStep::RequestConfirmation(template) => {
                let subject = match template {
                    SubjectTemplate::VictimSighting => {
                        let victim = goal.param_str("victim").ok_or("goal has no victim parameter")?.to_string();
                        let detection = goal.param_str("detection").unwrap_or_default().to_string();
                        let confidence = self
                            .kb
                            .value(&format!("victim.{victim}.confidence"))
                            .and_then(BeliefValue::as_number)
                            .unwrap_or(0.0);
                        let position = self
                            .kb
                            .value(&format!("victim.{victim}.position"))
                            .and_then(BeliefValue::as_position)
                            .ok_or_else(|| format!("no position known for victim {victim}"))?;
                        Subject::VictimSighting { victim, detection, confidence, position }
                    }
                    SubjectTemplate::Other(text) => Subject::Other { text: bind_template(text, lookup)? },
                };
                out.effects.push(Effect::OpenConfirmation { intention: self.intentions[i].id.clone(), subject });
                out.actions.push(act(ActionKind::Hold));
                Ok(Some(WaitOn::Request(None)))
            }
            PlanStep::RequestReplacement => {
                out.effects.push(Effect::RequestReplacement { intention: self.intentions[i].id.clone() });
                Ok(Some(WaitOn::Replacement))
            }
            PlanStep::Deliver(payload) => {
                if !self.profile.capabilities.contains(&Capability::FlotationPayload) {
                    return Err(format!("cannot deliver {payload} without payload capability"));
                }
                out.actions.push(act(ActionKind::Deliver(payload.clone())));
                Ok(None)
            }
            PlanStep::Land => {
                out.actions.push(act(ActionKind::Land));
                Ok(None)
            }
            PlanStep::ReturnToLaunch => {
                out.actions.push(act(ActionKind::ReturnToLaunch));
                Ok(Some(WaitOn::Arrival(self.profile.launch)))
            }
            PlanStep::Capture(sensor) => {
                let cap = Capability::sensor(sensor).ok_or_else(|| format!("unknown sensor {sensor}"))?;
                if !self.profile.capabilities.contains(&cap) {
                    return Err(format!("no {sensor} sensor"));
                }
                let subject = goal.param_str("faces").or_else(|| goal.param_str("face")).map(str::to_string);
                out.actions.push(act(ActionKind::Capture { sensor: cap, subject }));
                Ok(None)
            }
            PlanStep::Wait(amount) => {
                let n = match amount {
                    Amount::Ticks(n) => *n,
                    Amount::Param(p) => plan.parameters.get(p).map(|v| v.max(0.0).round() as u64).unwrap_or(0),
                };
                Ok(Some(WaitOn::Until(tick + n)))
            }
        }
    }
}

pub(crate) fn decision_event(rec: &ExplanationRecord) -> MissionEvent {
    MissionEvent::new(
        rec.tick,
        EventKind::DecisionLogged,
        Some(rec.agent.clone()),
        serde_json::to_value(rec).expect("records serialize"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdi::{CmpOp, Condition, Operand, PriorityThenOrder, Trigger};
    use crate::kb::Source;

    fn profile() -> AgentProfile {
        AgentProfile {
            capabilities: [Capability::Camera].into_iter().collect(),
            bounds: Bounds { width: 1000.0, height: 1000.0 },
            launch: Position::new(0.0, 0.0),
            arrival_tolerance: 0.5,
        }
    }

    fn library() -> Vec<PlanSpec> {
        let mut track = PlanSpec::new(
            "track",
            Trigger::GoalAdopted(Some("track_victim".into())),
            "track_victim",
            vec![PlanStep::MoveTo(MoveTarget::Belief("victim.{victim}.position".into())), PlanStep::Capture("camera".into())],
        );
        track.goal_type = GoalType::Maintain;
        track.role = Some("track".into());
        let mut cont = PlanSpec::new("continue-tracking", Trigger::Signal(Some("low_battery".into())), "track_victim", vec![
            PlanStep::Capture("camera".into()),
        ])
        .with_priority(5)
        .when(Condition::Role("track".into()));
        cont.goal_type = GoalType::Maintain;
        let mut rtl = PlanSpec::new("rtl", Trigger::Signal(Some("low_battery".into())), "return_to_launch", vec![
            PlanStep::ReturnToLaunch,
            PlanStep::Land,
        ])
        .with_priority(8)
        .requiring("auto_rtl")
        .when(Condition::Belief {
            key: "self.battery".into(),
            op: CmpOp::Le,
            value: Operand::Literal(BeliefValue::Scalar(20.0)),
        });
        rtl.aborts = vec!["track_victim".into()];
        rtl.goal_type = GoalType::Perform;
        let mut search = PlanSpec::new("search", Trigger::GoalAdopted(Some("search_area".into())), "search_area", vec![
            PlanStep::MoveTo(MoveTarget::Fixed(Position::new(100.0, 0.0))),
        ]);
        search.parameters.insert("altitude".into(), 40.0);
        vec![track, cont, rtl, search]
    }

    fn agent(auto_rtl: bool) -> AgentState {
        let role = Role::new("search").with_permission("auto_rtl", auto_rtl, None);
        let mut a = AgentState::new(AgentId::from("UAV-1"), role, profile(), library());
        let s = Source::Sensor(a.id.clone());
        a.kb.assert_belief(Belief::new("self.position", 1, BeliefValue::Position(Position::new(0.0, 0.0)), s.clone(), 0), 0)
            .unwrap();
        a.kb.assert_belief(Belief::new("victim.3.position", 1, BeliefValue::Position(Position::new(50.0, 0.0)), s, 0), 0)
            .unwrap();
        a
    }

    fn track_goal(a: &mut AgentState) -> GoalId {
        let id = a.next_goal_id();
        let g = GoalInstance::new(id.as_str(), GoalType::Maintain, "track_victim")
            .with_param("victim", BeliefValue::Identifier("3".into()));
        a.adopt_goal(g, 0).unwrap();
        id
    }

    #[test]
    fn adopt_on_idle_agent() {
        let mut a = agent(true);
        track_goal(&mut a);
        assert_eq!(a.active_goals().count(), 1);
        assert_eq!(a.queue.len(), 1);
    }

    #[test]
    fn adopt_duplicate_rejected_and_multi_goal_allowed() {
        let mut a = agent(true);
        let id = track_goal(&mut a);
        let dup = GoalInstance::new(id.as_str(), GoalType::Achieve, "x");
        assert_eq!(a.adopt_goal(dup, 0), Err(BdiError::DuplicateGoal(id)));
        let other = a.next_goal_id();
        a.adopt_goal(GoalInstance::new(other.as_str(), GoalType::Achieve, "search_area"), 0).unwrap();
        assert_eq!(a.active_goals().count(), 2);
    }

    #[test]
    fn move_step_emits_one_action_and_advances() {
        let mut a = agent(true);
        track_goal(&mut a);
        let out = a.reasoning_step(0, &PriorityThenOrder);
        let moves: Vec<_> = out.actions.iter().filter(|x| matches!(x.kind, ActionKind::MoveTo(_))).collect();
        assert_eq!(moves.len(), 1);
        assert_eq!(a.intentions[0].pc, 1);
        assert!(out.events.iter().any(|e| e.kind == EventKind::PlanSelected));

        // Empty queue, blocked on arrival: the move is re-issued, pc unchanged.
        let out = a.reasoning_step(1, &PriorityThenOrder);
        assert_eq!(a.intentions[0].pc, 1);
        assert_eq!(out.actions.len(), 1);
    }

    #[test]
    fn low_battery_with_rtl_permitted_switches_to_rtl() {
        let mut a = agent(true);
        track_goal(&mut a);
        a.reasoning_step(0, &PriorityThenOrder);
        let s = Source::Sensor(a.id.clone());
        a.kb.assert_belief(Belief::new("self.battery", 1, BeliefValue::Scalar(19.9), s, 1), 1).unwrap();
        a.enqueue(BdiEvent::signal("low_battery", 1, &a.id.clone()));
        let out = a.reasoning_step(1, &PriorityThenOrder);
        let sel = out.events.iter().find(|e| e.kind == EventKind::PlanSelected).unwrap();
        assert_eq!(sel.str_field("plan"), Some("rtl"));
        assert_eq!(out.decisions.len(), 1);
        assert!(out.decisions[0].inputs.iter().any(|i| i.key == "self.battery"));
        assert_eq!(a.intentions.len(), 1);
        assert_eq!(a.intentions[0].plan.0, "rtl");
        assert!(a.goals.iter().any(|g| g.name == "track_victim" && g.state == GoalState::Aborted));
    }

    #[test]
    fn low_battery_with_rtl_revoked_continues_tracking() {
        let mut a = agent(false);
        track_goal(&mut a);
        a.reasoning_step(0, &PriorityThenOrder);
        a.enqueue(BdiEvent::signal("low_battery", 1, &a.id.clone()));
        let out = a.reasoning_step(1, &PriorityThenOrder);
        let sel = out.events.iter().find(|e| e.kind == EventKind::PlanSelected).unwrap();
        assert_eq!(sel.str_field("plan"), Some("continue-tracking"));
        assert!(out.decisions.is_empty(), "single candidate needs no record");
    }

    #[test]
    fn replace_command_aborts_and_adopts_tracking() {
        let mut a = agent(true);
        let sid = a.next_goal_id();
        a.adopt_goal(GoalInstance::new(sid.as_str(), GoalType::Maintain, "search_area"), 0).unwrap();
        a.reasoning_step(0, &PriorityThenOrder);
        a.enqueue(BdiEvent::new(
            BdiEventKind::CommandReceived { command: Command::Replace { victim: "3".into() }, issuer: "ic".into() },
            1,
            a.id.clone(),
        ));
        let out = a.reasoning_step(1, &PriorityThenOrder);
        assert_eq!(a.goal(&sid).unwrap().state, GoalState::Aborted);
        let adopted = out.events.iter().find(|e| e.kind == EventKind::GoalAdopted).unwrap();
        assert_eq!(adopted.str_field("name"), Some("track_victim"));
        assert!(out.decisions.is_empty(), "commands are handled without an unhandled-event record");
    }

    #[test]
    fn unhandled_signal_is_recorded() {
        let mut a = agent(true);
        a.enqueue(BdiEvent::signal("mystery", 0, &a.id.clone()));
        let out = a.reasoning_step(0, &PriorityThenOrder);
        assert_eq!(out.decisions.len(), 1);
        assert_eq!(out.decisions[0].kind, DecisionKind::UnhandledEvent);
        assert_eq!(out.decisions[0].chosen, None);
        assert!(out.decisions[0].rationale.contains("no applicable plan"));
    }

    #[test]
    fn drop_goal_paths() {
        let mut a = agent(true);
        let id = track_goal(&mut a);
        a.reasoning_step(0, &PriorityThenOrder);
        assert!(a.has_live_intention(&id));
        a.drop_goal(&id, DropReason::Aborted, 1).unwrap();
        assert!(!a.has_live_intention(&id));
        assert_eq!(
            a.drop_goal(&id, DropReason::Aborted, 1),
            Err(BdiError::InvalidTransition { goal: id.clone(), from: GoalState::Aborted, to: GoalState::Aborted })
        );
        assert!(matches!(a.drop_goal(&GoalId::from("nope"), DropReason::Achieved, 1), Err(BdiError::NoSuchGoal(_))));
    }

    #[test]
    fn achieve_goal_completes_after_body() {
        let mut a = agent(true);
        let id = a.next_goal_id();
        a.adopt_goal(GoalInstance::new(id.as_str(), GoalType::Achieve, "search_area"), 0).unwrap();
        a.reasoning_step(0, &PriorityThenOrder);
        let s = Source::Sensor(a.id.clone());
        a.kb.assert_belief(Belief::new("self.position", 1, BeliefValue::Position(Position::new(100.0, 0.0)), s, 1), 1)
            .unwrap();
        let out = a.reasoning_step(1, &PriorityThenOrder);
        assert_eq!(a.goal(&id).unwrap().state, GoalState::Achieved);
        assert!(out.events.iter().any(|e| e.kind == EventKind::GoalDropped && e.str_field("reason") == Some("achieved")));
    }

    #[test]
    fn feedback_updates_are_atomic() {
        let mut a = agent(true);
        let before = a.clone();
        a.apply_feedback("search", &BTreeMap::new()).unwrap();
        assert_eq!(a, before);

        let good: BTreeMap<_, _> = [("altitude".to_string(), 25.0)].into();
        a.apply_feedback("search", &good).unwrap();
        assert_eq!(a.library[3].parameters["altitude"], 25.0);

        let mixed: BTreeMap<_, _> = [("altitude".to_string(), 10.0), ("speed".to_string(), 3.0)].into();
        let err = a.apply_feedback("search", &mixed).unwrap_err();
        assert!(matches!(err, BdiError::UnknownParameter { .. }));
        assert_eq!(a.library[3].parameters["altitude"], 25.0);
    }

    #[test]
    fn feedback_keeps_intention_running() {
        let mut a = agent(true);
        let id = a.next_goal_id();
        a.adopt_goal(GoalInstance::new(id.as_str(), GoalType::Maintain, "search_area"), 0).unwrap();
        a.reasoning_step(0, &PriorityThenOrder);
        let before = a.intentions.clone();
        a.apply_feedback("search", &[("altitude".to_string(), 25.0)].into()).unwrap();
        assert_eq!(a.intentions, before);
        assert_eq!(a.live_parameter("altitude"), Some(25.0));
    }

    #[test]
    fn failing_step_cancels_intention_not_goal() {
        let mut a = agent(true);
        let id = a.next_goal_id();
        a.library.push(PlanSpec::new("drop-float", Trigger::GoalAdopted(Some("deliver_flotation".into())), "deliver_flotation", vec![
            PlanStep::Deliver("flotation".into()),
        ]));
        a.adopt_goal(GoalInstance::new(id.as_str(), GoalType::Achieve, "deliver_flotation"), 0).unwrap();
        let out = a.reasoning_step(0, &PriorityThenOrder);
        assert!(out.events.iter().any(|e| e.kind == EventKind::PlanFailed));
        assert_eq!(a.goal(&id).unwrap().state, GoalState::Active);
        // The re-raised event excludes the failed plan and ends unhandled.
        let out = a.reasoning_step(1, &PriorityThenOrder);
        assert_eq!(out.decisions[0].kind, DecisionKind::UnhandledEvent);
    }
}
