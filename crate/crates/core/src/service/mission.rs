//! The mission engine: owns the world, the agents and the log, and advances
//! them one tick at a time.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::autonomy::PermissionTable;
use crate::bdi::{AgentProfile, AgentState, BdiEvent, BdiEventKind, Bounds, GoalInstance, PriorityThenOrder, PrimitiveAction, StepOutput};
use crate::coordination::Detection;
use crate::event::{EventKind, EventLog, MissionEvent};
use crate::interaction::{Command, ConfirmationRequest, ExplanationRecord, HumanInteraction, RequestState};
use crate::kb::{Belief, BeliefValue, Source};
use crate::sim::{ForcedDetection, Occurrence, ScenarioError, ScenarioSpec, UavPhysical, WorldParams, WorldState};
use crate::types::{AgentId, DecisionId, Position, RequestId, Tick};

use super::protocols::{EngineRequest, RescueState, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissionStatus {
    Running,
    Paused,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MissionError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("mission is finished")]
    Finished,
    #[error("malformed interaction: {0}")]
    Malformed(String),
    #[error("no such decision `{0}`")]
    NoSuchDecision(DecisionId),
    #[error("transcript line {line}: {message}")]
    Transcript { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Operator,
    Script,
}

/// Full mission state. The log is the single source of truth for everything
/// observable; the rest is the engine's working state.
#[derive(Debug, Clone)]
pub struct Mission {
    pub(crate) spec: ScenarioSpec,
    pub(crate) world: WorldState,
    pub(crate) agents: BTreeMap<AgentId, AgentState>,
    pub(crate) permissions: PermissionTable,
    pub(crate) requests: Vec<ConfirmationRequest>,
    pub(crate) engine_requests: BTreeMap<RequestId, EngineRequest>,
    pub(crate) decisions: BTreeMap<DecisionId, ExplanationRecord>,
    pub(crate) log: EventLog,
    pub(crate) status: MissionStatus,
    pub(crate) next_tick: Tick,
    pub(crate) max_ticks: Tick,
    pub(crate) pending: VecDeque<HumanInteraction>,
    pub(crate) windows: BTreeMap<AgentId, Window>,
    pub(crate) rescue: BTreeMap<String, RescueState>,
    pub(crate) face_owner: BTreeMap<String, AgentId>,
    pub(crate) faces_assigned: bool,
    pub(crate) forced: Vec<ForcedDetection>,
    pub(crate) sensed: BTreeSet<(AgentId, String)>,
    transcript: VecDeque<HumanInteraction>,
    script_pos: usize,
    pub(crate) seq: Counters,
    policy: PriorityThenOrder,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Counters {
    pub detection: u64,
    pub request: u64,
    pub decision: u64,
    pub group: u64,
}

impl Mission {
    /// Builds the mission and logs its tick-0 initial state.
    pub fn new(spec: ScenarioSpec) -> Result<Self, MissionError> {
        spec.validate()?;
        let c = &spec.constants;
        let bounds = Bounds { width: spec.world.width, height: spec.world.height };
        let mut world = WorldState::new(
            bounds,
            spec.seed,
            WorldParams {
                drain_base: c.drain_base,
                drain_move: c.drain_move,
                low_battery_threshold: c.low_battery_threshold,
                capture_rate: c.capture_rate,
            },
        );
        world.victims = spec.world.victims.clone();
        world.regions = spec.world.regions.clone();
        world.coverage = spec.world.faces.iter().map(|f| (f.clone(), 0.0)).collect();

        let permissions = PermissionTable::new(
            spec.permissions.vocabulary.clone(),
            spec.roles.clone(),
            spec.permissions.scoped.clone(),
        );
        let mut agents = BTreeMap::new();
        for a in &spec.agents {
            world.uavs.insert(
                a.id.clone(),
                UavPhysical::new(a.id.clone(), a.position, a.battery, a.max_speed, a.capabilities.clone(), &a.role),
            );
            let profile = AgentProfile {
                capabilities: a.capabilities.clone(),
                bounds,
                launch: a.position,
                arrival_tolerance: c.arrival_tolerance,
            };
            let role = permissions.resolve_role(&a.id, &a.role);
            agents.insert(a.id.clone(), AgentState::new(a.id.clone(), role, profile, spec.libraries[&a.library].clone()));
        }

        let max_ticks = c.max_ticks;
        let mut m = Mission {
            spec,
            world,
            agents,
            permissions,
            requests: Vec::new(),
            engine_requests: BTreeMap::new(),
            decisions: BTreeMap::new(),
            log: EventLog::new(),
            status: MissionStatus::Running,
            next_tick: 0,
            max_ticks,
            pending: VecDeque::new(),
            windows: BTreeMap::new(),
            rescue: BTreeMap::new(),
            face_owner: BTreeMap::new(),
            faces_assigned: false,
            forced: Vec::new(),
            sensed: BTreeSet::new(),
            transcript: VecDeque::new(),
            script_pos: 0,
            seq: Counters::default(),
            policy: PriorityThenOrder,
        };
        m.initialize();
        Ok(m)
    }

    fn initialize(&mut self) {
        let ids = self.agent_ids();
        for id in &ids {
            let role = self.agents[id].role.name.clone();
            self.emit(MissionEvent::new(0, EventKind::ActionExecuted, Some(id.clone()), json!({ "action": "set-mode", "mode": role })));
            let caps: Vec<String> = self.agents[id]
                .profile
                .capabilities
                .iter()
                .map(|c| serde_json::to_value(c).expect("capabilities serialize").as_str().unwrap_or_default().to_string())
                .collect();
            for cap in caps {
                self.assert_into(id, Belief::new(format!("self.capability.{cap}"), 1, BeliefValue::Boolean(true), Source::Sensor(id.clone()), 0));
            }
            let own = self.spec.agent(id).map(|a| a.beliefs.clone()).unwrap_or_default();
            let shared = self.spec.beliefs.clone();
            for b in own.into_iter().chain(shared) {
                self.assert_into(id, b);
            }
        }
        for id in &ids {
            let goals = self.spec.agent(id).map(|a| a.goals.clone()).unwrap_or_default();
            for g in goals {
                let mut inst = GoalInstance::new("", g.goal_type, &g.name);
                inst.params = g.params;
                self.adopt(id, inst);
            }
        }
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn status(&self) -> MissionStatus {
        self.status
    }

    /// The tick the next call to [`Mission::step`] will execute.
    pub fn next_tick(&self) -> Tick {
        self.next_tick
    }

    pub fn max_ticks(&self) -> Tick {
        self.max_ticks
    }

    pub fn set_max_ticks(&mut self, max_ticks: Tick) {
        self.max_ticks = max_ticks;
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentState> {
        self.agents.get(id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentState> {
        self.agents.values()
    }

    pub fn requests(&self) -> &[ConfirmationRequest] {
        &self.requests
    }

    pub fn permissions(&self) -> &PermissionTable {
        &self.permissions
    }

    pub fn decisions(&self) -> impl Iterator<Item = &ExplanationRecord> {
        self.decisions.values()
    }

    /// Events with `seq >= from_seq`.
    pub fn events_since(&self, from_seq: u64) -> &[MissionEvent] {
        self.log.since(from_seq)
    }

    pub fn pause(&mut self) {
        if self.status == MissionStatus::Running {
            self.status = MissionStatus::Paused;
        }
    }

    pub fn resume(&mut self) {
        if self.status == MissionStatus::Paused {
            self.status = MissionStatus::Running;
        }
    }

    /// Queues operator interactions to be admitted at their tick.
    pub fn load_transcript(&mut self, mut transcript: Vec<HumanInteraction>) -> Result<(), MissionError> {
        for hi in &transcript {
            hi.validate().map_err(MissionError::Malformed)?;
        }
        transcript.sort_by_key(|hi| hi.tick);
        self.transcript.extend(transcript);
        Ok(())
    }

    /// Admits a live interaction, stamped with the next tick. The ack is the
    /// seq of its interaction-received event.
    pub fn submit(&mut self, mut hi: HumanInteraction) -> Result<u64, MissionError> {
        if self.status == MissionStatus::Finished {
            return Err(MissionError::Finished);
        }
        hi.validate().map_err(MissionError::Malformed)?;
        hi.tick = self.next_tick;
        Ok(self.admit(hi, Origin::Operator))
    }

    fn admit(&mut self, hi: HumanInteraction, origin: Origin) -> u64 {
        let ev = MissionEvent::new(
            self.next_tick,
            EventKind::InteractionReceived,
            None,
            json!({ "interaction": hi, "origin": origin }),
        );
        self.pending.push_back(hi);
        self.emit(ev)
    }

    pub(crate) fn emit(&mut self, ev: MissionEvent) -> u64 {
        self.log.append(ev)
    }

    pub(crate) fn emit_all(&mut self, evs: impl IntoIterator<Item = MissionEvent>) {
        for ev in evs {
            self.emit(ev);
        }
    }

    pub(crate) fn agent_ids(&self) -> Vec<AgentId> {
        self.agents.keys().cloned().collect()
    }

    pub(crate) fn next_decision_id(&mut self) -> DecisionId {
        self.seq.decision += 1;
        DecisionId(format!("mission-d{}", self.seq.decision))
    }

    pub(crate) fn record_decision(&mut self, rec: ExplanationRecord) -> DecisionId {
        let id = rec.decision.clone();
        self.emit(crate::bdi::decision_event(&rec));
        self.decisions.insert(id.clone(), rec);
        id
    }

    /// Asserts a belief into one agent's knowledge base, logging and notifying on change.
    pub(crate) fn assert_into(&mut self, agent: &AgentId, b: Belief) {
        let now = self.next_tick;
        let Some(a) = self.agents.get_mut(agent) else { return };
        let key = b.key.clone();
        match a.kb.assert_belief(b, now) {
            Ok(Some(ev)) => {
                a.notify_belief(&ev);
                self.emit(ev);
            }
            Ok(None) => {}
            Err(e) => {
                self.emit(MissionEvent::error(now, Some(agent.clone()), "belief-rejected", format!("{key}: {e}")));
            }
        }
    }

    pub(crate) fn assert_into_all(&mut self, b: Belief) {
        for id in self.agent_ids() {
            self.assert_into(&id, b.clone());
        }
    }

    pub(crate) fn merge_into(&mut self, agent: &AgentId, batch: Vec<Belief>) {
        let now = self.next_tick;
        let Some(a) = self.agents.get_mut(agent) else { return };
        let report = a.kb.merge_remote(batch, now);
        for ev in &report.events {
            a.notify_belief(ev);
        }
        self.emit_all(report.events);
        for (i, e) in report.rejected {
            self.emit(MissionEvent::error(now, Some(agent.clone()), "belief-rejected", format!("batch entry {i}: {e}")));
        }
    }

    pub(crate) fn enqueue(&mut self, agent: &AgentId, ev: BdiEvent) {
        if let Some(a) = self.agents.get_mut(agent) {
            a.enqueue(ev);
        }
    }

    /// Adopts a goal on behalf of the engine; an empty id gets a fresh one.
    pub(crate) fn adopt(&mut self, agent: &AgentId, mut g: GoalInstance) {
        let now = self.next_tick;
        let Some(a) = self.agents.get_mut(agent) else { return };
        if g.id.as_str().is_empty() {
            g.id = a.next_goal_id();
        }
        match a.adopt_goal(g.clone(), now) {
            Ok(ev) => {
                self.emit(ev);
                self.on_goal_adopted(agent, &g);
            }
            Err(e) => {
                self.emit(MissionEvent::error(now, Some(agent.clone()), "goal-rejected", e.to_string()));
            }
        }
    }

    pub(crate) fn command(&mut self, agent: &AgentId, command: Command, issuer: &str, params: BTreeMap<String, BeliefValue>) {
        let mut ev = BdiEvent::new(
            BdiEventKind::CommandReceived { command, issuer: issuer.to_string() },
            self.next_tick,
            agent.clone(),
        );
        ev.params = params;
        self.enqueue(agent, ev);
    }

    /// Executes one tick. Returns false once the mission has finished.
    pub fn step(&mut self) -> bool {
        if self.status == MissionStatus::Finished {
            return false;
        }
        let now = self.next_tick;

        while self.transcript.front().is_some_and(|hi| hi.tick <= now) {
            let mut hi = self.transcript.pop_front().expect("checked");
            hi.tick = now;
            self.admit(hi, Origin::Operator);
        }
        while let Some(entry) = self.spec.script.get(self.script_pos).filter(|e| e.tick <= now).cloned() {
            self.script_pos += 1;
            match entry.occurrence {
                Occurrence::InjectInteraction(mut hi) => {
                    hi.tick = now;
                    self.admit(hi, Origin::Script);
                }
                Occurrence::PlaceVictim(v) => self.world.place_victim(v),
                Occurrence::SetWind(w) => self.world.wind = w,
                Occurrence::ForceDetection(f) => self.forced.push(f),
            }
        }

        while let Some(hi) = self.pending.pop_front() {
            self.handle_interaction(hi);
        }
        self.expire_requests();
        self.commit_replacements();

        for a in self.agents.values_mut() {
            a.role = self.permissions.resolve_role(&a.id, &a.role.name);
        }

        let detections = self.sense();
        self.process_detections(detections);
        self.coordinate();

        let mut actions: Vec<PrimitiveAction> = Vec::new();
        for id in self.agent_ids() {
            let out = {
                let a = self.agents.get_mut(&id).expect("listed");
                a.reasoning_step(now, &self.policy)
            };
            self.absorb(&id, out, &mut actions);
        }
        self.reassign_orphaned_faces();

        let report = self.world.tick(&actions);
        self.emit_all(report.events);
        for (agent, signal) in report.signals {
            self.assert_into(&agent, Belief::new("self.low_battery", 2, BeliefValue::Boolean(true), Source::Sensor(agent.clone()), now));
            self.enqueue(&agent, BdiEvent::signal(&signal, now, &agent));
        }
        self.check_coverage();

        self.next_tick += 1;
        if self.is_done() || self.next_tick >= self.max_ticks {
            self.status = MissionStatus::Finished;
        }
        true
    }

    /// Steps until finished, ignoring pause.
    pub fn run_to_end(&mut self) {
        if self.status == MissionStatus::Paused {
            self.status = MissionStatus::Running;
        }
        while self.step() {}
    }

    fn is_done(&self) -> bool {
        self.script_pos >= self.spec.script.len()
            && self.transcript.is_empty()
            && self.pending.is_empty()
            && self.forced.is_empty()
            && self.agents.values().all(AgentState::is_idle)
            && self.windows.values().all(|w| !w.is_pending())
            && self.requests.iter().all(|r| r.state != RequestState::Open)
    }

    fn absorb(&mut self, id: &AgentId, out: StepOutput, actions: &mut Vec<PrimitiveAction>) {
        self.emit_all(out.events);
        for rec in out.decisions {
            self.decisions.insert(rec.decision.clone(), rec);
        }
        actions.extend(out.actions);
        for effect in out.effects {
            match effect {
                crate::bdi::Effect::Broadcast(b) => {
                    for other in self.agent_ids().into_iter().filter(|o| o != id) {
                        self.merge_into(&other, vec![b.clone()]);
                    }
                }
                crate::bdi::Effect::OpenConfirmation { intention, subject } => {
                    let req = self.open_confirmation(id, subject);
                    if let Some(a) = self.agents.get_mut(id) {
                        a.bind_request(&intention, &req);
                    }
                }
                crate::bdi::Effect::RequestReplacement { .. } => self.request_replacement(id),
                crate::bdi::Effect::GoalAdopted(g) => self.on_goal_adopted(id, &g),
            }
        }
    }

    /// Asserts a periodic reading unless it repeats the stored value.
    fn observe(&mut self, agent: &AgentId, b: Belief) {
        if self.agents[agent].kb.value(&b.key) != Some(&b.value) {
            self.assert_into(agent, b);
        }
    }

    fn sense(&mut self) -> Vec<Detection> {
        let now = self.next_tick;
        let ids = self.agent_ids();
        for id in &ids {
            let uav = &self.world.uavs[id];
            let (pos, battery) = (uav.position, uav.battery);
            self.observe(id, Belief::new("self.position", 1, BeliefValue::Position(pos), Source::Sensor(id.clone()), now));
            self.observe(id, Belief::new("self.battery", 1, BeliefValue::Scalar(battery), Source::Sensor(id.clone()), now));
        }
        if now.is_multiple_of(self.spec.constants.telemetry_period) {
            let batch: Vec<Belief> = ids
                .iter()
                .flat_map(|id| {
                    let uav = &self.world.uavs[id];
                    [
                        Belief::new(format!("uav.{id}.position"), 1, BeliefValue::Position(uav.position), Source::Agent(id.clone()), now),
                        Belief::new(format!("uav.{id}.battery"), 1, BeliefValue::Scalar(uav.battery), Source::Agent(id.clone()), now),
                    ]
                })
                .collect();
            for id in &ids {
                let kb = &self.agents[id].kb;
                let fresh: Vec<Belief> = batch.iter().filter(|b| kb.value(&b.key) != Some(&b.value)).cloned().collect();
                self.merge_into(id, fresh);
            }
        }

        // Trackers keep their victim's position current while it is in view.
        let range = self.spec.sensor.range;
        for id in &ids {
            let tracked: Vec<String> = self.agents[id]
                .active_goals()
                .filter(|g| g.name == "track_victim")
                .filter_map(|g| g.param_str("victim").map(str::to_string))
                .collect();
            let here = self.world.uavs[id].position;
            for v in tracked {
                if let Some(victim) = self.world.victim(&v) {
                    if victim.position.distance(&here) <= range {
                        let p = victim.position;
                        self.observe(id, Belief::new(format!("victim.{v}.position"), 1, BeliefValue::Position(p), Source::Sensor(id.clone()), now));
                    }
                }
            }
        }

        let mut detections = Vec::new();
        for f in std::mem::take(&mut self.forced) {
            let Some(position) = f.position.or_else(|| self.world.victim(&f.victim).map(|v| v.position)) else { continue };
            self.sensed.insert((f.agent.clone(), f.victim.clone()));
            detections.push(Detection {
                id: String::new(),
                agent: f.agent,
                position,
                confidence: f.confidence,
                position_error: f.position_error,
                tick: now,
                victim: f.victim,
            });
        }
        let sensor = self.spec.sensor.clone();
        for id in &ids {
            let altitude = self.agents[id].live_parameter("altitude").unwrap_or(sensor.reference_altitude);
            let sensed = &self.sensed;
            let kb = &self.agents[id].kb;
            let found = self.world.simulate_detection(id, &sensor, altitude, |v| {
                sensed.contains(&(id.clone(), v.to_string())) || kb.get(&format!("victim.{v}.position")).is_some()
            });
            for d in found {
                self.sensed.insert((id.clone(), d.victim.clone()));
                detections.push(d);
            }
        }
        for d in &mut detections {
            self.seq.detection += 1;
            d.id = format!("det-{}", self.seq.detection);
        }
        for d in &detections {
            self.emit(MissionEvent::new(
                now,
                EventKind::Detection,
                Some(d.agent.clone()),
                serde_json::to_value(d).expect("detections serialize"),
            ));
        }
        detections
    }
}

/// Runs a scenario to completion with an operator transcript.
pub fn run_headless(spec: ScenarioSpec, transcript: Vec<HumanInteraction>, max_ticks: Option<Tick>) -> Result<EventLog, MissionError> {
    Ok(run_mission(spec, transcript, max_ticks)?.log)
}

/// Like [`run_headless`] but returns the finished mission.
pub fn run_mission(spec: ScenarioSpec, transcript: Vec<HumanInteraction>, max_ticks: Option<Tick>) -> Result<Mission, MissionError> {
    let mut m = Mission::new(spec)?;
    m.load_transcript(transcript)?;
    if let Some(t) = max_ticks {
        m.set_max_ticks(t);
    }
    m.run_to_end();
    Ok(m)
}

/// Parses a JSONL transcript; blank lines are skipped.
pub fn parse_transcript(text: &str) -> Result<Vec<HumanInteraction>, MissionError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let hi: HumanInteraction =
            serde_json::from_str(line).map_err(|e| MissionError::Transcript { line: i + 1, message: e.to_string() })?;
        hi.validate().map_err(|message| MissionError::Transcript { line: i + 1, message })?;
        out.push(hi);
    }
    Ok(out)
}

pub fn transcript_to_jsonl(transcript: &[HumanInteraction]) -> String {
    transcript
        .iter()
        .map(|hi| crate::event::canonical_string(&serde_json::to_value(hi).expect("interactions serialize")) + "\n")
        .collect()
}

impl Position {
    /// Parses `x,y`.
    pub fn parse_pair(s: &str) -> Option<Position> {
        let (x, y) = s.split_once(',')?;
        Some(Position::new(x.trim().parse().ok()?, y.trim().parse().ok()?))
    }
}
