//! Operator interactions: information sharing, commands, permission changes
//! and feedback on confirmation requests.

mod types;

pub use types::*;

use serde_json::json;

use crate::bdi::{BdiEvent, BdiEventKind};
use crate::event::{EventKind, MissionEvent};
use crate::kb::{Belief, BeliefValue, Source};
use crate::service::{EngineRequest, Mission, MissionError};
use crate::types::{AgentId, DecisionId, RequestId};

impl Mission {
    /// Applies one admitted interaction at the current tick boundary.
    pub(crate) fn handle_interaction(&mut self, hi: HumanInteraction) {
        let now = self.next_tick;
        match hi.body {
            InteractionBody::ProvidedInformation { mut belief } => {
                belief.tick = now;
                belief.source = Source::Human(hi.issuer.clone());
                self.assert_into_all(belief);
            }
            InteractionBody::IssuedCommand { target, command } => {
                if !self.agents.contains_key(&target) {
                    self.emit(MissionEvent::error(now, None, "unknown-agent", format!("no agent {target}")));
                    return;
                }
                if let Command::Replace { victim } = &command {
                    self.override_windows(victim, &target);
                }
                let ev = BdiEvent::new(
                    BdiEventKind::CommandReceived { command, issuer: hi.issuer.to_string() },
                    now,
                    target.clone(),
                );
                self.enqueue(&target, ev);
            }
            InteractionBody::ChangedPermission { mut change } => {
                change.tick = now;
                let roles: std::collections::BTreeMap<AgentId, String> =
                    self.agents.values().map(|a| (a.id.clone(), a.role.name.clone())).collect();
                match self.permissions.apply_change(&change, |a| roles.get(a).cloned(), now) {
                    Ok(ev) => {
                        self.emit(ev);
                    }
                    Err(e) => {
                        self.emit(MissionEvent::error(now, None, "permission-rejected", e.to_string()));
                    }
                }
            }
            InteractionBody::FeedbackResponse { request, verdict, .. } => self.answer(&hi.issuer.to_string(), request, verdict),
        }
    }

    fn answer(&mut self, issuer: &str, request: RequestId, verdict: Verdict) {
        let now = self.next_tick;
        let Some(r) = self.requests.iter_mut().find(|r| r.request == request) else {
            self.emit(MissionEvent::error(now, None, "stale-response", format!("no request {request}")));
            return;
        };
        if r.state != RequestState::Open {
            let msg = format!("request {request} is {:?}", r.state).to_lowercase();
            let agent = r.agent.clone();
            self.emit(MissionEvent::error(now, Some(agent), "stale-response", msg));
            return;
        }
        r.state = RequestState::Answered;
        let r = r.clone();
        self.emit(MissionEvent::new(
            now,
            EventKind::ConfirmationAnswered,
            Some(r.agent.clone()),
            json!({ "request": r.request, "agent": r.agent, "state": "answered", "verdict": verdict, "subject": r.subject }),
        ));
        let operator = Source::Human(issuer.into());
        if let Some(victim) = r.subject.victim() {
            let status = if verdict == Verdict::Refute { "refuted" } else { "confirmed" };
            self.assert_into_all(Belief::new(
                format!("victim.{victim}.status"),
                2,
                BeliefValue::Text(status.into()),
                operator.clone(),
                now,
            ));
        }
        if let Verdict::Amend(entries) = &verdict {
            for (key, value) in entries {
                self.assert_into_all(Belief::new(key.clone(), 2, value.clone(), operator.clone(), now));
            }
        }

        match self.engine_requests.remove(&request) {
            Some(EngineRequest::Group { detections, representative }) => match verdict {
                Verdict::Confirm | Verdict::Amend(_) => {
                    if let Some(d) = detections.iter().find(|d| d.id == representative) {
                        self.register_victim(&d.clone());
                    }
                }
                Verdict::Refute => {
                    if detections.len() > 1 {
                        for d in &detections {
                            self.register_victim(d);
                        }
                    }
                }
            },
            Some(EngineRequest::NeedsHuman { requester }) => {
                if verdict == Verdict::Refute {
                    self.abandon_replacement(&requester);
                }
            }
            None => {
                let mut ev = BdiEvent::new(
                    BdiEventKind::FeedbackReceived { request: request.clone(), verdict, subject: r.subject.clone() },
                    now,
                    r.agent.clone(),
                );
                if let Subject::VictimSighting { victim, detection, .. } = &r.subject {
                    ev = ev
                        .with_param("victim", BeliefValue::Identifier(victim.clone()))
                        .with_param("detection", BeliefValue::Identifier(detection.clone()));
                }
                self.enqueue(&r.agent, ev);
            }
        }
    }

    /// Opens a request for `agent`, reusing an open one about the same subject.
    pub(crate) fn open_confirmation(&mut self, agent: &AgentId, subject: Subject) -> RequestId {
        let identity = subject.identity();
        if let Some(r) = self
            .requests
            .iter()
            .find(|r| r.state == RequestState::Open && &r.agent == agent && r.subject.identity() == identity)
        {
            return r.request.clone();
        }
        let now = self.next_tick;
        self.seq.request += 1;
        let request = RequestId(format!("req-{}", self.seq.request));
        let r = ConfirmationRequest { request: request.clone(), agent: agent.clone(), subject, opened: now, state: RequestState::Open };
        self.emit(MissionEvent::new(
            now,
            EventKind::ConfirmationOpened,
            Some(agent.clone()),
            json!({
                "request": r.request,
                "agent": r.agent,
                "subject": r.subject,
                "opened": now,
                "state": "open",
                "expires": now + self.spec.constants.confirmation_expiry,
            }),
        ));
        self.requests.push(r);
        request
    }

    /// Expires open requests that outlived the confirmation window.
    pub(crate) fn expire_requests(&mut self) {
        let now = self.next_tick;
        let expiry = self.spec.constants.confirmation_expiry;
        let due: Vec<usize> = (0..self.requests.len())
            .filter(|&i| self.requests[i].state == RequestState::Open && now >= self.requests[i].opened + expiry)
            .collect();
        for i in due {
            self.requests[i].state = RequestState::Expired;
            let r = self.requests[i].clone();
            self.emit(MissionEvent::new(
                now,
                EventKind::ConfirmationAnswered,
                Some(r.agent.clone()),
                json!({ "request": r.request, "agent": r.agent, "state": "expired", "verdict": null, "subject": r.subject }),
            ));
            match self.engine_requests.remove(&r.request) {
                Some(EngineRequest::Group { detections, representative }) => {
                    if let Some(d) = detections.iter().find(|d| d.id == representative) {
                        self.register_victim(&d.clone());
                    }
                }
                Some(EngineRequest::NeedsHuman { requester }) => self.abandon_replacement(&requester),
                None => {
                    let evs = match self.agents.get_mut(&r.agent) {
                        Some(a) => a.expire_request(&r.request, now),
                        None => Vec::new(),
                    };
                    self.emit_all(evs);
                }
            }
        }
    }

    /// The rationale behind one logged decision.
    pub fn explain(&self, decision: &DecisionId) -> Result<&ExplanationRecord, MissionError> {
        self.decisions.get(decision).ok_or_else(|| MissionError::NoSuchDecision(decision.clone()))
    }
}
