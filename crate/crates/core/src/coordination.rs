//! Multi-agent protocols: replacement selection, detection deduplication,
//! rescue strategy and building-face assignment.
//!
//! Everything here is a pure function of its inputs; the engine gathers the
//! inputs from agent knowledge bases and logs the outcome.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::interaction::CandidateRecord;
use crate::types::{AgentId, DecisionId, Position, Tick};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: String,
    pub agent: AgentId,
    pub position: Position,
    pub confidence: f64,
    pub position_error: f64,
    pub tick: Tick,
    /// Simulator ground truth (`fp-*` for false positives); never read by agents.
    pub victim: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionGroup {
    /// Member detection ids, sorted.
    pub members: Vec<String>,
    pub ambiguous: bool,
}

/// Single-linkage grouping: two detections link iff their distance is at most
/// `radius` plus both position errors. A group is ambiguous when any member's
/// error exceeds `accuracy_limit`. Output is independent of input order.
pub fn deduplicate_detections(detections: &[Detection], radius: f64, accuracy_limit: f64) -> Vec<DetectionGroup> {
    let n = detections.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&detections[i], &detections[j]);
            if a.position.distance(&b.position) <= radius + a.position_error + b.position_error {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<DetectionGroup> = groups
        .into_values()
        .map(|idx| {
            let mut members: Vec<String> = idx.iter().map(|&i| detections[i].id.clone()).collect();
            members.sort();
            let ambiguous = idx.iter().any(|&i| detections[i].position_error > accuracy_limit);
            DetectionGroup { members, ambiguous }
        })
        .collect();
    out.sort_by(|a, b| a.members.cmp(&b.members));
    out
}

/// The member that speaks for a group: highest confidence, then lower agent id,
/// then lower detection id.
pub fn representative<'a>(group: &DetectionGroup, detections: &'a [Detection]) -> Option<&'a Detection> {
    detections.iter().filter(|d| group.members.contains(&d.id)).min_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.agent.cmp(&b.agent))
            .then_with(|| a.id.cmp(&b.id))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementCandidate {
    pub agent: AgentId,
    /// Last known position, if any telemetry has been received.
    pub position: Option<Position>,
    pub permitted: bool,
    pub capable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementOutcome {
    pub chosen: Option<AgentId>,
    pub candidates: Vec<CandidateRecord>,
}

/// Nearest permitted, capable agent other than the requester; ties go to the
/// lower agent id.
pub fn select_replacement(requester: &AgentId, task: Position, candidates: &[ReplacementCandidate]) -> ReplacementOutcome {
    let mut sorted: Vec<&ReplacementCandidate> = candidates.iter().filter(|c| &c.agent != requester).collect();
    sorted.sort_by(|a, b| a.agent.cmp(&b.agent));
    let mut records = Vec::new();
    let mut best: Option<(f64, &AgentId)> = None;
    for c in sorted {
        let reason = if !c.permitted {
            Some("act_as_replacement not granted".to_string())
        } else if !c.capable {
            Some("lacks camera".to_string())
        } else if c.position.is_none() {
            Some("position unknown".to_string())
        } else {
            None
        };
        match (reason, c.position) {
            (None, Some(p)) => {
                let d = p.distance(&task);
                records.push(CandidateRecord { id: c.agent.to_string(), applicable: true, reason: format!("{d:.1} m") });
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, &c.agent));
                }
            }
            (reason, _) => records.push(CandidateRecord {
                id: c.agent.to_string(),
                applicable: false,
                reason: reason.unwrap_or_default(),
            }),
        }
    }
    ReplacementOutcome { chosen: best.map(|(_, a)| a.clone()), candidates: records }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RescueChoice {
    DeliverFlotation,
    StreamOnly,
}

impl RescueChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            RescueChoice::DeliverFlotation => "deliver-flotation",
            RescueChoice::StreamOnly => "stream-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Carrier {
    pub agent: AgentId,
    pub position: Option<Position>,
    pub speed: f64,
    pub permitted: bool,
    pub capable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescueInput {
    pub victim: String,
    pub victim_position: Position,
    /// Seconds.
    pub boat_eta: f64,
    pub can_receive: bool,
    pub carriers: Vec<Carrier>,
    pub margin: f64,
    pub handling_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescueDecision {
    pub victim: String,
    pub boat_eta: f64,
    pub delivery_eta: Option<f64>,
    pub choice: RescueChoice,
    pub carrier: Option<AgentId>,
    #[serde(default)]
    pub rationale: Option<DecisionId>,
    #[serde(skip)]
    pub candidates: Vec<CandidateRecord>,
}

/// Deliver iff the fastest permitted carrier's `distance / speed + handling`
/// plus `margin` beats the boat.
pub fn plan_rescue(input: &RescueInput) -> RescueDecision {
    let mut best: Option<(f64, &AgentId)> = None;
    let mut records = Vec::new();
    let mut carriers: Vec<&Carrier> = input.carriers.iter().collect();
    carriers.sort_by(|a, b| a.agent.cmp(&b.agent));
    for c in carriers {
        let usable = c.permitted && c.capable && c.speed > 0.0;
        match (usable, c.position) {
            (true, Some(p)) => {
                let eta = p.distance(&input.victim_position) / c.speed + input.handling_time;
                records.push(CandidateRecord { id: c.agent.to_string(), applicable: true, reason: format!("eta {eta:.1} s") });
                if best.is_none_or(|(b, _)| eta < b) {
                    best = Some((eta, &c.agent));
                }
            }
            _ => {
                let reason = if !c.capable {
                    "no flotation payload"
                } else if !c.permitted {
                    "deliver_payload not granted"
                } else {
                    "position unknown"
                };
                records.push(CandidateRecord { id: c.agent.to_string(), applicable: false, reason: reason.into() });
            }
        }
    }
    let deliver = input.can_receive && best.is_some_and(|(eta, _)| eta + input.margin < input.boat_eta);
    RescueDecision {
        victim: input.victim.clone(),
        boat_eta: input.boat_eta,
        delivery_eta: best.map(|(e, _)| e),
        choice: if deliver { RescueChoice::DeliverFlotation } else { RescueChoice::StreamOnly },
        carrier: if deliver { best.map(|(_, a)| a.clone()) } else { None },
        rationale: None,
        candidates: records,
    }
}

/// Round-robin assignment of faces (in the given order) over agents (ascending).
pub fn assign_faces(faces: &[String], agents: &[AgentId]) -> BTreeMap<AgentId, Vec<String>> {
    let mut agents: Vec<&AgentId> = agents.iter().collect();
    agents.sort();
    let mut out: BTreeMap<AgentId, Vec<String>> = BTreeMap::new();
    if agents.is_empty() {
        return out;
    }
    for (i, f) in faces.iter().enumerate() {
        out.entry(agents[i % agents.len()].clone()).or_default().push(f.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(id: &str, agent: &str, x: f64, y: f64, err: f64) -> Detection {
        Detection {
            id: id.into(),
            agent: agent.into(),
            position: Position::new(x, y),
            confidence: 0.9,
            position_error: err,
            tick: 0,
            victim: "v1".into(),
        }
    }

    #[test]
    fn nearby_detections_form_one_group() {
        let ds = [det("d1", "UAV-1", 100.0, 100.0, 2.0), det("d2", "UAV-2", 104.0, 103.0, 2.0)];
        let g = deduplicate_detections(&ds, 10.0, 15.0);
        assert_eq!(g, vec![DetectionGroup { members: vec!["d1".into(), "d2".into()], ambiguous: false }]);
    }

    #[test]
    fn far_detections_stay_apart() {
        let ds = [det("d1", "UAV-1", 0.0, 0.0, 1.0), det("d2", "UAV-2", 50.0, 0.0, 1.0)];
        assert_eq!(deduplicate_detections(&ds, 10.0, 15.0).len(), 2);
    }

    #[test]
    fn inaccurate_detection_is_ambiguous() {
        let ds = [det("d1", "UAV-1", 0.0, 0.0, 40.0)];
        let g = deduplicate_detections(&ds, 10.0, 15.0);
        assert_eq!(g.len(), 1);
        assert!(g[0].ambiguous);
    }

    #[test]
    fn linkage_is_transitive() {
        let ds = [det("a", "U", 0.0, 0.0, 0.0), det("b", "U", 9.0, 0.0, 0.0), det("c", "U", 18.0, 0.0, 0.0)];
        assert_eq!(deduplicate_detections(&ds, 10.0, 15.0).len(), 1);
    }

    #[test]
    fn representative_prefers_confidence_then_agent() {
        let mut a = det("d1", "UAV-2", 0.0, 0.0, 1.0);
        let mut b = det("d2", "UAV-1", 0.0, 0.0, 1.0);
        a.confidence = 0.8;
        b.confidence = 0.8;
        let ds = [a, b];
        let g = &deduplicate_detections(&ds, 10.0, 15.0)[0];
        assert_eq!(representative(g, &ds).unwrap().agent.as_str(), "UAV-1");
    }

    fn cand(a: &str, d: f64, permitted: bool) -> ReplacementCandidate {
        ReplacementCandidate { agent: a.into(), position: Some(Position::new(d, 0.0)), permitted, capable: true }
    }

    #[test]
    fn replacement_picks_nearest_permitted() {
        let req = AgentId::from("UAV-1");
        let cs = [cand("UAV-2", 50.0, true), cand("UAV-3", 80.0, true)];
        assert_eq!(select_replacement(&req, Position::default(), &cs).chosen, Some("UAV-2".into()));
        let cs = [cand("UAV-2", 50.0, false), cand("UAV-3", 80.0, true)];
        assert_eq!(select_replacement(&req, Position::default(), &cs).chosen, Some("UAV-3".into()));
    }

    #[test]
    fn replacement_never_returns_requester_and_breaks_ties_by_id() {
        let req = AgentId::from("UAV-1");
        let cs = [cand("UAV-1", 0.0, true), cand("UAV-3", 10.0, true), cand("UAV-2", 10.0, true)];
        assert_eq!(select_replacement(&req, Position::default(), &cs).chosen, Some("UAV-2".into()));
        assert_eq!(select_replacement(&req, Position::default(), &cs[..1]).chosen, None);
    }

    fn rescue(boat_eta: f64) -> RescueInput {
        RescueInput {
            victim: "v1".into(),
            victim_position: Position::new(600.0, 300.0),
            boat_eta,
            can_receive: true,
            carriers: vec![Carrier {
                agent: "UAV-2".into(),
                position: Some(Position::new(100.0, 300.0)),
                speed: 5.0,
                permitted: true,
                capable: true,
            }],
            margin: 30.0,
            handling_time: 20.0,
        }
    }

    #[test]
    fn rescue_rule() {
        let d = plan_rescue(&rescue(300.0));
        assert_eq!(d.delivery_eta, Some(120.0));
        assert_eq!(d.choice, RescueChoice::DeliverFlotation);
        assert_eq!(plan_rescue(&rescue(100.0)).choice, RescueChoice::StreamOnly);
        assert_eq!(plan_rescue(&rescue(150.0)).choice, RescueChoice::StreamOnly, "strict inequality");
        let mut no_carrier = rescue(600.0);
        no_carrier.carriers.clear();
        let d = plan_rescue(&no_carrier);
        assert_eq!(d.choice, RescueChoice::StreamOnly);
        assert_eq!(d.delivery_eta, None);
        let mut cannot = rescue(600.0);
        cannot.can_receive = false;
        assert_eq!(plan_rescue(&cannot).choice, RescueChoice::StreamOnly);
    }

    #[test]
    fn faces_round_robin() {
        let faces: Vec<String> = ["north", "east", "south", "west"].iter().map(|s| s.to_string()).collect();
        let a = assign_faces(&faces, &["UAV-2".into(), "UAV-1".into(), "UAV-3".into()]);
        assert_eq!(a[&AgentId::from("UAV-1")], ["north", "west"]);
        assert_eq!(a[&AgentId::from("UAV-2")], ["east"]);
        assert_eq!(a[&AgentId::from("UAV-3")], ["south"]);
    }
}
