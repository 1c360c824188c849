use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autonomy::PermissionChange;
use crate::kb::{Belief, BeliefValue};
use crate::types::{AgentId, DecisionId, OperatorId, Position, RequestId, Tick};

/// Operator command addressed to a single agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Replace { victim: String },
    Goto { position: Position },
    Rtl,
    StopTracking,
    Deliver { payload: String },
    SetRole { role: String },
    /// Parameter feedback for a plan or goal of the target agent.
    Tune { target: String, updates: BTreeMap<String, f64> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Replace { .. } => "replace",
            Command::Goto { .. } => "goto",
            Command::Rtl => "rtl",
            Command::StopTracking => "stop-tracking",
            Command::Deliver { .. } => "deliver",
            Command::SetRole { .. } => "set-role",
            Command::Tune { .. } => "tune",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Confirm,
    Refute,
    Amend(BTreeMap<String, BeliefValue>),
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Confirm => "confirm",
            Verdict::Refute => "refute",
            Verdict::Amend(_) => "amend",
        }
    }
}

/// What an agent asks the operator about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Subject {
    VictimSighting { victim: String, detection: String, confidence: f64, position: Position },
    DuplicateAmbiguity { group: String, victim: String },
    Other { text: String },
}

impl Subject {
    /// Identity used for the one-open-request-per-subject rule.
    pub fn identity(&self) -> String {
        match self {
            Subject::VictimSighting { detection, .. } => format!("victim-sighting:{detection}"),
            Subject::DuplicateAmbiguity { group, .. } => format!("duplicate-ambiguity:{group}"),
            Subject::Other { text } => format!("other:{text}"),
        }
    }

    pub fn victim(&self) -> Option<&str> {
        match self {
            Subject::VictimSighting { victim, .. } | Subject::DuplicateAmbiguity { victim, .. } => Some(victim),
            Subject::Other { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InteractionBody {
    ProvidedInformation { belief: Belief },
    IssuedCommand { target: AgentId, command: Command },
    ChangedPermission { change: PermissionChange },
    FeedbackResponse {
        request: RequestId,
        verdict: Verdict,
        #[serde(default)]
        note: String,
    },
}

impl InteractionBody {
    pub fn kind_name(&self) -> &'static str {
        match self {
            InteractionBody::ProvidedInformation { .. } => "provided-information",
            InteractionBody::IssuedCommand { .. } => "issued-command",
            InteractionBody::ChangedPermission { .. } => "changed-permission",
            InteractionBody::FeedbackResponse { .. } => "feedback-response",
        }
    }
}

/// The only channel through which operators affect a running mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanInteraction {
    pub issuer: OperatorId,
    pub tick: Tick,
    #[serde(flatten)]
    pub body: InteractionBody,
}

impl HumanInteraction {
    pub fn new(issuer: impl Into<OperatorId>, tick: Tick, body: InteractionBody) -> Self {
        Self { issuer: issuer.into(), tick, body }
    }

    pub fn command(issuer: &str, tick: Tick, target: &str, command: Command) -> Self {
        Self::new(issuer, tick, InteractionBody::IssuedCommand { target: target.into(), command })
    }

    pub fn inform(issuer: &str, tick: Tick, belief: Belief) -> Self {
        Self::new(issuer, tick, InteractionBody::ProvidedInformation { belief })
    }

    pub fn permission(change: PermissionChange) -> Self {
        Self::new(change.issuer.clone(), change.tick, InteractionBody::ChangedPermission { change })
    }

    pub fn respond(issuer: &str, tick: Tick, request: &str, verdict: Verdict) -> Self {
        Self::new(
            issuer,
            tick,
            InteractionBody::FeedbackResponse { request: request.into(), verdict, note: String::new() },
        )
    }

    /// Checks the variant invariants that do not depend on mission state.
    pub fn validate(&self) -> Result<(), String> {
        match &self.body {
            InteractionBody::ProvidedInformation { belief } => {
                belief.validate().map_err(|e| e.to_string())?;
                if belief.tick > self.tick {
                    return Err(format!("belief `{}` is stamped after its interaction", belief.key));
                }
                Ok(())
            }
            InteractionBody::ChangedPermission { change } if change.tick > self.tick => {
                Err("permission change stamped after its interaction".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestState {
    Open,
    Answered,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationRequest {
    pub request: RequestId,
    pub agent: AgentId,
    pub subject: Subject,
    pub opened: Tick,
    pub state: RequestState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionKind {
    PlanSelection,
    UnhandledEvent,
    Replacement,
    Dedup,
    RescueStrategy,
    FaceAssignment,
}

impl DecisionKind {
    pub fn is_coordination(&self) -> bool {
        !matches!(self, DecisionKind::PlanSelection | DecisionKind::UnhandledEvent)
    }
}

impl fmt::Display for DecisionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DecisionKind::PlanSelection => "plan-selection",
            DecisionKind::UnhandledEvent => "unhandled-event",
            DecisionKind::Replacement => "replacement",
            DecisionKind::Dedup => "dedup",
            DecisionKind::RescueStrategy => "rescue-strategy",
            DecisionKind::FaceAssignment => "face-assignment",
        };
        f.write_str(s)
    }
}

/// A belief read while making a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRead {
    pub key: String,
    pub value: BeliefValue,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub applicable: bool,
    #[serde(default)]
    pub reason: String,
}

/// Structured rationale for one autonomous decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub decision: DecisionId,
    pub kind: DecisionKind,
    pub agent: AgentId,
    pub tick: Tick,
    pub event: String,
    pub inputs: Vec<InputRead>,
    pub candidates: Vec<CandidateRecord>,
    pub chosen: Option<String>,
    pub rationale: String,
}

impl ExplanationRecord {
    /// Fills `rationale` from the structured fields.
    pub fn rendered(mut self) -> Self {
        self.rationale = render_rationale(&self);
        self
    }
}

pub fn render_rationale(r: &ExplanationRecord) -> String {
    let applicable: Vec<&str> =
        r.candidates.iter().filter(|c| c.applicable).map(|c| c.id.as_str()).collect();
    let rejected: Vec<String> = r
        .candidates
        .iter()
        .filter(|c| !c.applicable)
        .map(|c| format!("{} ({})", c.id, c.reason))
        .collect();
    let inputs: Vec<String> = r.inputs.iter().map(|i| format!("{}={}", i.key, i.value)).collect();
    let chosen = r.chosen.as_deref().unwrap_or("none");
    match r.kind {
        DecisionKind::PlanSelection => format!(
            "{} handled {} by selecting plan {} from applicable [{}]; rejected [{}]; inputs [{}]",
            r.agent,
            r.event,
            chosen,
            applicable.join(", "),
            rejected.join(", "),
            inputs.join(", ")
        ),
        DecisionKind::UnhandledEvent => format!(
            "{} found no applicable plan for {}; rejected [{}]",
            r.agent,
            r.event,
            rejected.join(", ")
        ),
        DecisionKind::Replacement => format!(
            "replacement for {} requested by {}: selected {} as the closest permitted candidate; eligible [{}]; excluded [{}]",
            r.event,
            r.agent,
            chosen,
            applicable.join(", "),
            rejected.join(", ")
        ),
        DecisionKind::Dedup => format!(
            "{} grouped detections [{}] as one object represented by {}",
            r.event,
            applicable.join(", "),
            chosen
        ),
        DecisionKind::RescueStrategy => format!(
            "rescue strategy for {} chose {}; inputs [{}]",
            r.event,
            chosen,
            inputs.join(", ")
        ),
        DecisionKind::FaceAssignment => {
            let assigned: Vec<String> =
                r.candidates.iter().filter(|c| c.applicable).map(|c| format!("{}: {}", c.id, c.reason)).collect();
            format!("face assignment after {}: [{}]", r.event, assigned.join("; "))
        }
    }
}
