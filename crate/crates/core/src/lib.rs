//! Deterministic multi-UAV mission engine with BDI agents and human-on-the-loop
//! supervisory control.
//!
//! Operators steer a running mission through four kinds of interaction
//! (information, commands, permission changes, feedback). Every observable
//! effect is an entry in a canonical JSONL event log that replays to the same
//! state.

pub mod autonomy;
pub mod bdi;
pub mod coordination;
pub mod event;
pub mod interaction;
pub mod kb;
pub mod service;
pub mod sim;
pub mod types;

pub use autonomy::{Permission, PermissionChange, PermissionTable, Role, Scope};
pub use bdi::{AgentState, BdiEvent, GoalInstance, GoalState, GoalType, PlanSpec};
pub use event::{EventKind, EventLog, MissionEvent};
pub use interaction::{Command, ExplanationRecord, HumanInteraction, InteractionBody, Subject, Verdict};
pub use kb::{Belief, BeliefValue, KnowledgeBase, Source};
pub use service::{replay, run_headless, verify, Mission, MissionError, MissionSnapshot, MissionStatus};
pub use sim::{fixture, load_scenario, ScenarioSpec, FIXTURES};
pub use types::{AgentId, DecisionId, GoalId, OperatorId, PlanId, Position, RequestId, Tick};
