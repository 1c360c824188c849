//! BDI reasoning: event queue, plan library, two-step dispatcher, goal
//! lifecycle and intention execution.

mod agent;
mod dispatch;
mod plan;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interaction::{Command, Subject, Verdict};
use crate::kb::BeliefValue;
use crate::types::{AgentId, GoalId, PlanId, Position, RequestId, Tick};

pub use agent::{ActionKind, AgentProfile, AgentState, Bounds, Capability, Effect, PrimitiveAction, StepOutput};
pub(crate) use agent::decision_event;
pub use dispatch::{
    applicable_plans, evaluate_plans, select_plan, trigger_matches, MetaPolicy, PlanEvaluation, PriorityThenOrder,
};
pub use plan::{bind_template, Amount, CmpOp, Condition, MoveTarget, Operand, PlanSpec, PlanStep, SubjectTemplate, Trigger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GoalType {
    #[default]
    Achieve,
    Maintain,
    Perform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalState {
    Active,
    Suspended,
    Achieved,
    Aborted,
}

impl GoalState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, GoalState::Achieved | GoalState::Aborted)
    }

    /// active -> {suspended, achieved, aborted}; suspended -> {active, aborted}
    pub fn can_become(&self, next: GoalState) -> bool {
        use GoalState::*;
        matches!(
            (self, next),
            (Active, Suspended) | (Active, Achieved) | (Active, Aborted) | (Suspended, Active) | (Suspended, Aborted)
        )
    }
}

/// Terminal outcome requested through [`AgentState::drop_goal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Achieved,
    Aborted,
}

impl From<DropReason> for GoalState {
    fn from(r: DropReason) -> Self {
        match r {
            DropReason::Achieved => GoalState::Achieved,
            DropReason::Aborted => GoalState::Aborted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalInstance {
    pub id: GoalId,
    #[serde(rename = "type")]
    pub goal_type: GoalType,
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, BeliefValue>,
    pub state: GoalState,
}

impl GoalInstance {
    pub fn new(id: &str, goal_type: GoalType, name: &str) -> Self {
        Self { id: GoalId::from(id), goal_type, name: name.to_string(), params: BTreeMap::new(), state: GoalState::Active }
    }

    pub fn with_param(mut self, name: &str, value: BeliefValue) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn param_str(&self, name: &str) -> Option<&str> {
        self.params.get(name).and_then(BeliefValue::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BdiEventKind {
    BeliefChanged { key: String },
    GoalAdopted { goal: GoalId, name: String },
    GoalDropped { goal: GoalId, name: String },
    InternalSignal { name: String },
    CommandReceived { command: Command, issuer: String },
    FeedbackReceived { request: RequestId, verdict: Verdict, subject: Subject },
}

/// Input to the reasoning cycle. Each event is consumed exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdiEvent {
    pub kind: BdiEventKind,
    pub tick: Tick,
    pub agent: AgentId,
    /// Values bound into `{name}` placeholders of the plans that handle the event.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, BeliefValue>,
    /// Plans that already failed for this event and must not be retried.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<PlanId>,
}

impl BdiEvent {
    pub fn new(kind: BdiEventKind, tick: Tick, agent: AgentId) -> Self {
        Self { kind, tick, agent, params: BTreeMap::new(), excluded: Vec::new() }
    }

    pub fn signal(name: &str, tick: Tick, agent: &AgentId) -> Self {
        Self::new(BdiEventKind::InternalSignal { name: name.to_string() }, tick, agent.clone())
    }

    pub fn with_param(mut self, name: &str, value: BeliefValue) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn summary(&self) -> String {
        match &self.kind {
            BdiEventKind::BeliefChanged { key } => format!("belief-changed({key})"),
            BdiEventKind::GoalAdopted { goal, name } => format!("goal-adopted({name} {goal})"),
            BdiEventKind::GoalDropped { goal, name } => format!("goal-dropped({name} {goal})"),
            BdiEventKind::InternalSignal { name } => format!("internal-signal({name})"),
            BdiEventKind::CommandReceived { command, issuer } => format!("command-received({} from {issuer})", command.name()),
            BdiEventKind::FeedbackReceived { request, verdict, .. } => {
                format!("feedback-received({} on {request})", verdict.name())
            }
        }
    }
}

impl fmt::Display for BdiEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary())
    }
}

/// What a blocked intention is waiting for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitOn {
    Arrival(Position),
    Until(Tick),
    /// `None` until the engine has opened (or reused) the request.
    Request(Option<RequestId>),
    Replacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentionStatus {
    Running,
    Blocked(WaitOn),
    Done,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intention {
    pub id: String,
    pub goal: GoalId,
    pub plan: PlanId,
    pub pc: usize,
    pub status: IntentionStatus,
    /// Goals this intention suspended; resumed when it ends.
    pub suspended: Vec<GoalId>,
    pub trigger: BdiEvent,
}

impl Intention {
    pub fn is_live(&self) -> bool {
        matches!(self.status, IntentionStatus::Running | IntentionStatus::Blocked(_))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BdiError {
    #[error("goal `{0}` is already adopted")]
    DuplicateGoal(GoalId),
    #[error("no such goal `{0}`")]
    NoSuchGoal(GoalId),
    #[error("goal `{goal}` cannot move from {from:?} to {to:?}")]
    InvalidTransition { goal: GoalId, from: GoalState, to: GoalState },
    #[error("no goal or plan named `{0}`")]
    NoSuchTarget(String),
    #[error("unknown parameter `{param}` on `{target}`")]
    UnknownParameter { target: String, param: String },
}
