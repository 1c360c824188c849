//! Declarative plan templates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::kb::{BeliefValue, KeyPattern};
use crate::types::{PlanId, Position};

use super::GoalType;

/// Which events a plan reacts to. A `None` filter matches every event of the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    BeliefChanged(Option<KeyPattern>),
    GoalAdopted(Option<String>),
    GoalDropped(Option<String>),
    Signal(Option<String>),
    Command(Option<String>),
    Feedback(Option<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn ordered(&self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

/// Right-hand side of a belief comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Literal(BeliefValue),
    /// The numeric constraint of a permission held by the agent's role.
    Constraint(String),
}

/// One conjunct of a plan precondition. Keys may contain `{param}` placeholders
/// bound from the triggering event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Belief { key: String, op: CmpOp, value: Operand },
    Within { key: String, center: Position, radius: f64 },
    Role(String),
    Tick { op: CmpOp, value: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveTarget {
    Fixed(Position),
    Belief(String),
    Param(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amount {
    Ticks(u64),
    Param(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectTemplate {
    VictimSighting,
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStep {
    MoveTo(MoveTarget),
    SetMode(String),
    BroadcastBelief(String),
    RequestConfirmation(SubjectTemplate),
    RequestReplacement,
    Deliver(String),
    Land,
    ReturnToLaunch,
    Capture(String),
    Wait(Amount),
}

impl PlanStep {
    pub fn name(&self) -> &'static str {
        match self {
            PlanStep::MoveTo(_) => "move-to",
            PlanStep::SetMode(_) => "set-mode",
            PlanStep::BroadcastBelief(_) => "broadcast-belief",
            PlanStep::RequestConfirmation(_) => "request-confirmation",
            PlanStep::RequestReplacement => "request-replacement",
            PlanStep::Deliver(_) => "deliver",
            PlanStep::Land => "land",
            PlanStep::ReturnToLaunch => "return-to-launch",
            PlanStep::Capture(_) => "capture",
            PlanStep::Wait(_) => "wait",
        }
    }
}

/// A reactive plan: trigger, precondition, optional permission gate, body.
///
/// Selecting a plan binds it to a goal named `goal` (the triggering goal for
/// goal-adopted events, otherwise an existing active goal of that name or a
/// fresh one). `suspends` and `aborts` name other goals of the same agent that
/// give way while the plan runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub id: PlanId,
    pub trigger: Trigger,
    #[serde(default)]
    pub precondition: Vec<Condition>,
    #[serde(default)]
    pub required_permission: Option<String>,
    #[serde(default)]
    pub priority: i32,
    pub body: Vec<PlanStep>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub goal: String,
    #[serde(default)]
    pub goal_type: GoalType,
    #[serde(default)]
    pub role: Option<String>,
    #[serde(default)]
    pub suspends: Vec<String>,
    #[serde(default)]
    pub aborts: Vec<String>,
}

impl PlanSpec {
    /// Minimal plan used by tests and builders.
    pub fn new(id: &str, trigger: Trigger, goal: &str, body: Vec<PlanStep>) -> Self {
        Self {
            id: PlanId::from(id),
            trigger,
            precondition: Vec::new(),
            required_permission: None,
            priority: 0,
            body,
            parameters: BTreeMap::new(),
            goal: goal.to_string(),
            goal_type: GoalType::Achieve,
            role: None,
            suspends: Vec::new(),
            aborts: Vec::new(),
        }
    }

    pub fn with_priority(mut self, priority: i32) -> Self {
        self.priority = priority;
        self
    }

    pub fn requiring(mut self, permission: &str) -> Self {
        self.required_permission = Some(permission.to_string());
        self
    }

    pub fn when(mut self, condition: Condition) -> Self {
        self.precondition.push(condition);
        self
    }

    /// Checks the structural invariants: non-empty body, referenced parameters exist.
    pub fn validate(&self) -> Result<(), String> {
        if self.body.is_empty() {
            return Err(format!("plan `{}` has an empty body", self.id));
        }
        for step in &self.body {
            if let PlanStep::Wait(Amount::Param(p)) = step {
                if !self.parameters.contains_key(p) {
                    return Err(format!("plan `{}` references unknown parameter `{p}`", self.id));
                }
            }
        }
        Ok(())
    }
}

/// Replaces `{name}` placeholders using `lookup`. Fails on an unbound name.
pub fn bind_template(template: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after.find('}').ok_or_else(|| format!("unterminated placeholder in `{template}`"))?;
        let name = &after[..end];
        let value = lookup(name).ok_or_else(|| format!("unbound placeholder `{{{name}}}` in `{template}`"))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_binding() {
        let lookup = |n: &str| (n == "victim").then(|| "3".to_string());
        assert_eq!(bind_template("victim.{victim}.position", lookup).unwrap(), "victim.3.position");
        assert_eq!(bind_template("boat.eta", lookup).unwrap(), "boat.eta");
        assert!(bind_template("victim.{other}.position", lookup).is_err());
        assert!(bind_template("victim.{victim", lookup).is_err());
    }

    #[test]
    fn empty_body_rejected() {
        let p = PlanSpec::new("p", Trigger::Signal(None), "g", vec![]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn unknown_wait_parameter_rejected() {
        let p = PlanSpec::new("p", Trigger::Signal(None), "g", vec![PlanStep::Wait(Amount::Param("dwell".into()))]);
        assert!(p.validate().is_err());
        let mut ok = p.clone();
        ok.parameters.insert("dwell".into(), 3.0);
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn plan_json_shape() {
        let json = r#"{
            "id": "rtl",
            "trigger": {"signal": "low_battery"},
            "precondition": [{"belief": {"key": "self.battery", "op": "le", "value": {"literal": {"scalar": 20.0}}}}],
            "required_permission": "auto_rtl",
            "priority": 8,
            "body": ["return_to_launch", "land"],
            "goal": "return_to_launch",
            "goal_type": "perform",
            "role": "rtl",
            "aborts": ["track_victim"]
        }"#;
        let p: PlanSpec = serde_json::from_str(json).unwrap();
        assert_eq!(p.priority, 8);
        assert_eq!(p.body, vec![PlanStep::ReturnToLaunch, PlanStep::Land]);
        assert_eq!(p.trigger, Trigger::Signal(Some("low_battery".into())));
    }
}
