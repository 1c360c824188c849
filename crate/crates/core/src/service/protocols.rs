//! Mission-level coordination: detection dedup, replacement handover with an
//! override window, rescue strategy and facade assignment.

use std::collections::BTreeMap;

use crate::bdi::{BdiEvent, Capability, DropReason, GoalInstance, GoalState, GoalType};
use crate::coordination::{
    assign_faces, deduplicate_detections, plan_rescue, representative, select_replacement, Carrier, Detection,
    ReplacementCandidate, RescueChoice, RescueInput,
};
use crate::event::MissionEvent;
use crate::interaction::{CandidateRecord, Command, DecisionKind, ExplanationRecord, InputRead, Subject};
use crate::kb::{Belief, BeliefValue, Source};
use crate::types::{AgentId, DecisionId, GoalId, Tick};

use super::Mission;

/// Agent id attached to decisions the engine takes on behalf of the team.
pub const COORDINATOR: &str = "coordination";

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum EngineRequest {
    /// An ambiguous duplicate group awaiting the operator.
    Group { detections: Vec<Detection>, representative: String },
    /// A replacement no agent could take.
    NeedsHuman { requester: AgentId },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum WindowState {
    Pending,
    NeedsHuman,
    Overridden(AgentId),
    Committed(AgentId),
}

/// A tentative replacement that commits at `commit_at` unless an operator
/// command supersedes it first.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Window {
    pub victim: String,
    pub chosen: Option<AgentId>,
    pub commit_at: Tick,
    pub decision: DecisionId,
    pub state: WindowState,
}

impl Window {
    pub fn is_pending(&self) -> bool {
        self.state == WindowState::Pending
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RescueState {
    pub fingerprint: (AgentId, u64, u64),
    pub choice: RescueChoice,
}

fn input(key: impl Into<String>, value: BeliefValue, version: u64) -> InputRead {
    InputRead { key: key.into(), value, version }
}

fn faces_param(g: &GoalInstance) -> Vec<String> {
    g.param_str("faces").map(|s| s.split(',').filter(|f| !f.is_empty()).map(str::to_string).collect()).unwrap_or_default()
}

impl Mission {
    pub(crate) fn process_detections(&mut self, detections: Vec<Detection>) {
        if detections.is_empty() {
            return;
        }
        let now = self.next_tick;
        let c = &self.spec.constants;
        let groups = deduplicate_detections(&detections, c.dedup_radius, c.accuracy_limit);
        for g in groups {
            let Some(rep) = representative(&g, &detections).cloned() else { continue };
            self.seq.group += 1;
            let gid = format!("grp-{}", self.seq.group);
            if g.members.len() >= 2 || g.ambiguous {
                let members: Vec<&Detection> =
                    g.members.iter().filter_map(|m| detections.iter().find(|d| &d.id == m)).collect();
                let candidates = members
                    .iter()
                    .map(|d| CandidateRecord {
                        id: d.id.clone(),
                        applicable: true,
                        reason: format!(
                            "{} at {} confidence {:.2} error {:.1} m",
                            d.agent, d.position, d.confidence, d.position_error
                        ),
                    })
                    .collect();
                let inputs = members
                    .iter()
                    .map(|d| input(format!("detection.{}.position", d.id), BeliefValue::Position(d.position), 0))
                    .collect();
                let rec = ExplanationRecord {
                    decision: self.next_decision_id(),
                    kind: DecisionKind::Dedup,
                    agent: AgentId::from(COORDINATOR),
                    tick: now,
                    event: if g.ambiguous { format!("{gid} (ambiguous)") } else { gid.clone() },
                    inputs,
                    candidates,
                    chosen: Some(rep.id.clone()),
                    rationale: String::new(),
                }
                .rendered();
                self.record_decision(rec);
            }
            if g.ambiguous {
                let subject = Subject::DuplicateAmbiguity { group: gid, victim: rep.victim.clone() };
                let req = self.open_confirmation(&rep.agent, subject);
                let dets = g.members.iter().filter_map(|m| detections.iter().find(|d| &d.id == m)).cloned().collect();
                self.engine_requests.insert(req, EngineRequest::Group { detections: dets, representative: rep.id.clone() });
            } else {
                self.register_victim(&rep);
            }
        }
    }

    /// Records a confirmed-distinct detection in the detecting agent's knowledge base.
    pub(crate) fn register_victim(&mut self, d: &Detection) {
        let now = self.next_tick;
        let v = &d.victim;
        let key = format!("victim.{v}.position");
        let src = Source::Sensor(d.agent.clone());
        let known = self.agents.get(&d.agent).is_some_and(|a| a.kb.get(&key).is_some());
        self.assert_into(&d.agent, Belief::new(&key, 1, BeliefValue::Position(d.position), src.clone(), now));
        if known {
            return;
        }
        self.assert_into(&d.agent, Belief::new(format!("victim.{v}.confidence"), 2, BeliefValue::Scalar(d.confidence), src.clone(), now));
        self.assert_into(&d.agent, Belief::new(format!("victim.{v}.status"), 2, BeliefValue::Text("candidate".into()), src, now));
        let ev = BdiEvent::signal("victim_detected", now, &d.agent)
            .with_param("victim", BeliefValue::Identifier(v.clone()))
            .with_param("detection", BeliefValue::Identifier(d.id.clone()))
            .with_param("confidence", BeliefValue::Scalar(d.confidence));
        self.enqueue(&d.agent, ev);
    }

    fn tracked_victim(&self, agent: &AgentId) -> Option<String> {
        self.agents
            .get(agent)?
            .goals
            .iter()
            .filter(|g| g.name == "track_victim" && !g.state.is_terminal())
            .find_map(|g| g.param_str("victim").map(str::to_string))
    }

    pub(crate) fn request_replacement(&mut self, requester: &AgentId) {
        let now = self.next_tick;
        let Some(victim) = self.tracked_victim(requester) else {
            self.emit(MissionEvent::error(now, Some(requester.clone()), "replacement-rejected", "requester is not tracking"));
            return;
        };
        let kb = &self.agents[requester].kb;
        let vkey = format!("victim.{victim}.position");
        let Some(vb) = kb.get(&vkey).cloned() else {
            self.emit(MissionEvent::error(now, Some(requester.clone()), "replacement-rejected", format!("no {vkey}")));
            return;
        };
        let task = vb.value.as_position().unwrap_or_default();
        let mut inputs = vec![input(&vkey, vb.value.clone(), vb.version)];
        let mut candidates = Vec::new();
        for (id, a) in &self.agents {
            let key = format!("uav.{id}.position");
            let pos = kb.get(&key).and_then(|b| {
                inputs.push(input(&key, b.value.clone(), b.version));
                b.value.as_position()
            });
            candidates.push(ReplacementCandidate {
                agent: id.clone(),
                position: pos,
                permitted: a.role.is_granted("act_as_replacement"),
                capable: a.profile.capabilities.contains(&Capability::Camera),
            });
        }
        let outcome = select_replacement(requester, task, &candidates);
        let decision = self.next_decision_id();
        let rec = ExplanationRecord {
            decision: decision.clone(),
            kind: DecisionKind::Replacement,
            agent: requester.clone(),
            tick: now,
            event: format!("tracking of {victim}"),
            inputs,
            candidates: outcome.candidates,
            chosen: outcome.chosen.as_ref().map(ToString::to_string),
            rationale: String::new(),
        }
        .rendered();
        self.record_decision(rec);
        let window = self.spec.constants.override_window;
        let state = if outcome.chosen.is_some() { WindowState::Pending } else { WindowState::NeedsHuman };
        if state == WindowState::NeedsHuman {
            let subject = Subject::Other { text: format!("no replacement available for {requester} tracking {victim}") };
            let req = self.open_confirmation(requester, subject);
            self.engine_requests.insert(req, EngineRequest::NeedsHuman { requester: requester.clone() });
        }
        self.windows.insert(
            requester.clone(),
            Window { victim, chosen: outcome.chosen, commit_at: now + window, decision, state },
        );
    }

    /// Operator replace commands supersede any open window for the victim.
    pub(crate) fn override_windows(&mut self, victim: &str, target: &AgentId) {
        for (requester, w) in self.windows.iter_mut() {
            if w.victim == victim
                && requester != target
                && matches!(w.state, WindowState::Pending | WindowState::NeedsHuman)
            {
                w.state = WindowState::Overridden(target.clone());
            }
        }
    }

    pub(crate) fn commit_replacements(&mut self) {
        let now = self.next_tick;
        let due: Vec<(AgentId, AgentId, String)> = self
            .windows
            .iter()
            .filter(|(_, w)| w.is_pending() && now >= w.commit_at)
            .filter_map(|(r, w)| w.chosen.clone().map(|c| (r.clone(), c, w.victim.clone())))
            .collect();
        for (requester, chosen, victim) in due {
            self.command(&chosen, Command::Replace { victim }, COORDINATOR, BTreeMap::new());
            if let Some(w) = self.windows.get_mut(&requester) {
                w.state = WindowState::Committed(chosen);
            }
        }
    }

    /// Engine reactions to a goal entering an agent's goal base.
    pub(crate) fn on_goal_adopted(&mut self, agent: &AgentId, g: &GoalInstance) {
        if g.name != "track_victim" {
            return;
        }
        let Some(victim) = g.param_str("victim").map(str::to_string) else { return };
        let now = self.next_tick;
        self.assert_into_all(Belief::new(
            format!("victim.{victim}.tracker"),
            2,
            BeliefValue::Identifier(agent.to_string()),
            Source::Agent(agent.clone()),
            now,
        ));
        let handovers: Vec<(AgentId, bool)> = self
            .windows
            .iter()
            .filter(|(r, w)| *r != agent && w.victim == victim)
            .filter_map(|(r, w)| match &w.state {
                WindowState::Overridden(t) if t == agent => Some((r.clone(), true)),
                WindowState::Committed(t) if t == agent => Some((r.clone(), false)),
                _ => None,
            })
            .collect();
        for (requester, overridden) in handovers {
            self.windows.remove(&requester);
            self.hand_over(&requester, &victim, overridden);
        }
    }

    /// Releases the previous tracker once its replacement has taken over.
    fn hand_over(&mut self, requester: &AgentId, victim: &str, overridden: bool) {
        let now = self.next_tick;
        let Some(a) = self.agents.get_mut(requester) else { return };
        let mut events = Vec::new();
        let track: Vec<GoalId> = a
            .goals
            .iter()
            .filter(|g| g.name == "track_victim" && !g.state.is_terminal() && g.param_str("victim") == Some(victim))
            .map(|g| g.id.clone())
            .collect();
        for id in track {
            if let Ok(evs) = a.drop_goal(&id, DropReason::Aborted, now) {
                events.extend(evs);
            }
        }
        if overridden {
            events.extend(a.suspend_goals_named("find_replacement", now));
        } else {
            a.release_replacement();
        }
        self.emit_all(events);
        if overridden {
            self.command(requester, Command::Rtl, COORDINATOR, BTreeMap::new());
        }
    }

    /// Fallback when nobody answered a replacement the team could not staff.
    pub(crate) fn abandon_replacement(&mut self, requester: &AgentId) {
        let Some(w) = self.windows.remove(requester) else { return };
        self.hand_over_unstaffed(requester, &w.victim);
    }

    fn hand_over_unstaffed(&mut self, requester: &AgentId, victim: &str) {
        let now = self.next_tick;
        let Some(a) = self.agents.get_mut(requester) else { return };
        let mut events = Vec::new();
        let track: Vec<GoalId> = a
            .goals
            .iter()
            .filter(|g| g.name == "track_victim" && !g.state.is_terminal() && g.param_str("victim") == Some(victim))
            .map(|g| g.id.clone())
            .collect();
        for id in track {
            if let Ok(evs) = a.drop_goal(&id, DropReason::Aborted, now) {
                events.extend(evs);
            }
        }
        a.release_replacement();
        self.emit_all(events);
    }

    /// Tick-0 facade assignment and rescue re-planning.
    pub(crate) fn coordinate(&mut self) {
        if !self.faces_assigned {
            self.faces_assigned = true;
            self.assign_initial_faces();
        }
        self.plan_rescues();
    }

    fn assign_initial_faces(&mut self) {
        let faces = self.spec.world.faces.clone();
        if faces.is_empty() {
            return;
        }
        let cameras: Vec<AgentId> = self
            .agents
            .values()
            .filter(|a| a.profile.capabilities.contains(&Capability::Camera))
            .map(|a| a.id.clone())
            .collect();
        let plan = assign_faces(&faces, &cameras);
        self.log_face_decision("mission start", &plan);
        for (agent, fs) in plan {
            for f in &fs {
                self.face_owner.insert(f.clone(), agent.clone());
            }
            let g = GoalInstance::new("", GoalType::Maintain, "map_building")
                .with_param("faces", BeliefValue::Text(fs.join(",")));
            self.adopt(&agent, g);
        }
    }

    fn log_face_decision(&mut self, event: &str, plan: &BTreeMap<AgentId, Vec<String>>) {
        let now = self.next_tick;
        let inputs = self
            .world
            .coverage
            .iter()
            .map(|(f, c)| input(format!("face.{f}.coverage"), BeliefValue::Scalar(*c), 0))
            .collect();
        let candidates = plan
            .iter()
            .map(|(a, fs)| CandidateRecord { id: a.to_string(), applicable: true, reason: fs.join(",") })
            .collect();
        let rec = ExplanationRecord {
            decision: self.next_decision_id(),
            kind: DecisionKind::FaceAssignment,
            agent: AgentId::from(COORDINATOR),
            tick: now,
            event: event.to_string(),
            inputs,
            candidates,
            chosen: Some(plan.keys().map(ToString::to_string).collect::<Vec<_>>().join(",")),
            rationale: String::new(),
        }
        .rendered();
        self.record_decision(rec);
    }

    fn map_goal_faces(&self, agent: &AgentId, live_only: bool) -> Vec<(GoalId, Vec<String>)> {
        self.agents
            .get(agent)
            .map(|a| {
                a.goals
                    .iter()
                    .filter(|g| g.name == "map_building")
                    .filter(|g| if live_only { g.state == GoalState::Active } else { !g.state.is_terminal() })
                    .map(|g| (g.id.clone(), faces_param(g)))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Hands faces whose owner gave up mapping to the agents still mapping.
    pub(crate) fn reassign_orphaned_faces(&mut self) {
        if self.face_owner.is_empty() {
            return;
        }
        let orphans: Vec<String> = self
            .spec
            .world
            .faces
            .iter()
            .filter(|f| self.world.coverage.get(*f).copied().unwrap_or(0.0) < 1.0)
            .filter(|f| {
                self.face_owner
                    .get(*f)
                    .is_none_or(|o| !self.map_goal_faces(o, false).iter().any(|(_, fs)| fs.contains(f)))
            })
            .cloned()
            .collect();
        if orphans.is_empty() {
            return;
        }
        let receivers: Vec<AgentId> =
            self.agents.keys().filter(|a| !self.map_goal_faces(a, true).is_empty()).cloned().collect();
        if receivers.is_empty() {
            return;
        }
        let extra = assign_faces(&orphans, &receivers);
        let lost_by: Vec<String> = orphans
            .iter()
            .filter_map(|f| self.face_owner.get(f).map(ToString::to_string))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let now = self.next_tick;
        let mut plan = BTreeMap::new();
        for (agent, new_faces) in &extra {
            let existing = self.map_goal_faces(agent, true);
            let mut faces: Vec<String> = existing.iter().flat_map(|(_, fs)| fs.clone()).collect();
            faces.extend(new_faces.iter().cloned());
            plan.insert(agent.clone(), faces);
        }
        self.log_face_decision(&format!("map_building dropped by {}", lost_by.join(",")), &plan);
        for (agent, faces) in plan {
            for (id, _) in self.map_goal_faces(&agent, false) {
                let evs = self
                    .agents
                    .get_mut(&agent)
                    .and_then(|a| a.drop_goal(&id, DropReason::Aborted, now).ok())
                    .unwrap_or_default();
                self.emit_all(evs);
            }
            for f in &faces {
                self.face_owner.insert(f.clone(), agent.clone());
            }
            let g = GoalInstance::new("", GoalType::Maintain, "map_building")
                .with_param("faces", BeliefValue::Text(faces.join(",")));
            self.adopt(&agent, g);
        }
    }

    /// Drops mapping goals whose faces are fully covered.
    pub(crate) fn check_coverage(&mut self) {
        let now = self.next_tick;
        for agent in self.agent_ids() {
            for (id, faces) in self.map_goal_faces(&agent, false) {
                let done = !faces.is_empty()
                    && faces.iter().all(|f| self.world.coverage.get(f).copied().unwrap_or(0.0) >= 1.0);
                if done {
                    let evs = self
                        .agents
                        .get_mut(&agent)
                        .and_then(|a| a.drop_goal(&id, DropReason::Achieved, now).ok())
                        .unwrap_or_default();
                    self.emit_all(evs);
                }
            }
        }
    }

    fn plan_rescues(&mut self) {
        let now = self.next_tick;
        let mut trackers: BTreeMap<String, AgentId> = BTreeMap::new();
        for a in self.agents.values() {
            for g in a.active_goals().filter(|g| g.name == "track_victim") {
                if let Some(v) = g.param_str("victim") {
                    trackers.entry(v.to_string()).or_insert_with(|| a.id.clone());
                }
            }
        }
        for (victim, tracker) in trackers {
            let kb = &self.agents[&tracker].kb;
            let Some(boat) = kb.get("boat.eta").cloned() else { continue };
            let Some(boat_eta) = boat.value.as_number() else { continue };
            let vkey = format!("victim.{victim}.position");
            let Some(vb) = kb.get(&vkey).cloned() else { continue };
            let Some(victim_position) = vb.value.as_position() else { continue };
            let rkey = format!("victim.{victim}.can_receive");
            let receive = kb.get(&rkey).cloned();
            let can_receive = receive.as_ref().is_none_or(|b| b.value != BeliefValue::Boolean(false));
            let fingerprint = (tracker.clone(), boat.version, receive.as_ref().map_or(0, |b| b.version));
            if self.rescue.get(&victim).is_some_and(|r| r.fingerprint == fingerprint) {
                continue;
            }

            let mut inputs = vec![
                input("boat.eta", boat.value.clone(), boat.version),
                input(&vkey, vb.value.clone(), vb.version),
            ];
            if let Some(b) = &receive {
                inputs.push(input(&rkey, b.value.clone(), b.version));
            }
            let mut carriers = Vec::new();
            for (id, a) in self.agents.iter().filter(|(id, _)| **id != tracker) {
                let key = format!("uav.{id}.position");
                let position = kb.get(&key).and_then(|b| {
                    inputs.push(input(&key, b.value.clone(), b.version));
                    b.value.as_position()
                });
                carriers.push(Carrier {
                    agent: id.clone(),
                    position,
                    speed: self.spec.agent(id).map_or(0.0, |s| s.max_speed),
                    permitted: a.role.is_granted("deliver_payload"),
                    capable: a.profile.capabilities.contains(&Capability::FlotationPayload),
                });
            }
            let c = &self.spec.constants;
            let mut decision = plan_rescue(&RescueInput {
                victim: victim.clone(),
                victim_position,
                boat_eta,
                can_receive,
                carriers,
                margin: c.margin,
                handling_time: c.handling_time,
            });
            let eta = decision.delivery_eta.map_or("none".to_string(), |e| format!("{e:.1} s"));
            let mut candidates = vec![
                CandidateRecord {
                    id: RescueChoice::DeliverFlotation.as_str().into(),
                    applicable: decision.choice == RescueChoice::DeliverFlotation,
                    reason: format!(
                        "delivery eta {eta} + margin {:.0} s vs boat eta {boat_eta:.1} s{}",
                        c.margin,
                        if can_receive { "" } else { "; victim cannot receive" }
                    ),
                },
                CandidateRecord { id: RescueChoice::StreamOnly.as_str().into(), applicable: true, reason: "always available".into() },
            ];
            candidates.extend(std::mem::take(&mut decision.candidates));
            let id = self.next_decision_id();
            let rec = ExplanationRecord {
                decision: id.clone(),
                kind: DecisionKind::RescueStrategy,
                agent: tracker.clone(),
                tick: now,
                event: format!("{victim} (boat eta {boat_eta:.1} s, delivery eta {eta})"),
                inputs,
                candidates,
                chosen: Some(decision.choice.as_str().into()),
                rationale: String::new(),
            }
            .rendered();
            self.record_decision(rec);
            decision.rationale = Some(id);

            let previous = self.rescue.insert(victim.clone(), RescueState { fingerprint, choice: decision.choice });
            self.assert_into_all(Belief::new(
                format!("victim.{victim}.rescue_plan"),
                3,
                BeliefValue::Text(decision.choice.as_str().into()),
                Source::Agent(tracker.clone()),
                now,
            ));
            let flipped = previous.is_none_or(|p| p.choice != RescueChoice::DeliverFlotation);
            if decision.choice == RescueChoice::DeliverFlotation && flipped {
                if let Some(carrier) = &decision.carrier {
                    let params = BTreeMap::from([("victim".to_string(), BeliefValue::Identifier(victim.clone()))]);
                    self.command(carrier, Command::Deliver { payload: "flotation".into() }, COORDINATOR, params);
                }
            }
        }
    }
}
