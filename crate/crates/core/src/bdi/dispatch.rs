//! Two-step dispatcher: applicability matching, then meta-level selection.

use crate::autonomy::Role;
use crate::interaction::InputRead;
use crate::kb::{BeliefValue, KnowledgeBase};
use crate::types::PlanId;

use super::plan::{bind_template, CmpOp, Condition, Operand, PlanSpec, Trigger};
use super::{BdiEvent, BdiEventKind};

pub fn trigger_matches(trigger: &Trigger, ev: &BdiEvent) -> bool {
    fn opt_eq(filter: &Option<String>, actual: &str) -> bool {
        filter.as_deref().is_none_or(|f| f == actual)
    }
    match (trigger, &ev.kind) {
        (Trigger::BeliefChanged(p), BdiEventKind::BeliefChanged { key }) => p.as_ref().is_none_or(|p| p.matches(key)),
        (Trigger::GoalAdopted(f), BdiEventKind::GoalAdopted { name, .. }) => opt_eq(f, name),
        (Trigger::GoalDropped(f), BdiEventKind::GoalDropped { name, .. }) => opt_eq(f, name),
        (Trigger::Signal(f), BdiEventKind::InternalSignal { name }) => opt_eq(f, name),
        (Trigger::Command(f), BdiEventKind::CommandReceived { command, .. }) => opt_eq(f, command.name()),
        (Trigger::Feedback(f), BdiEventKind::FeedbackReceived { verdict, .. }) => opt_eq(f, verdict.name()),
        _ => false,
    }
}

/// Outcome of matching one trigger-relevant plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEvaluation {
    pub plan: PlanId,
    pub applicable: bool,
    pub reason: String,
    pub inputs: Vec<InputRead>,
}

struct ConditionCheck {
    holds: bool,
    reason: String,
}

fn read_input(kb: &KnowledgeBase, key: &str, inputs: &mut Vec<InputRead>) -> Option<BeliefValue> {
    let b = kb.get(key)?;
    if !inputs.iter().any(|i| i.key == key) {
        inputs.push(InputRead { key: key.to_string(), value: b.value.clone(), version: b.version });
    }
    Some(b.value.clone())
}

fn check(
    cond: &Condition,
    ev: &BdiEvent,
    kb: &KnowledgeBase,
    role: &Role,
    inputs: &mut Vec<InputRead>,
) -> ConditionCheck {
    let lookup = |name: &str| {
        if name == "self" {
            Some(ev.agent.to_string())
        } else {
            ev.params.get(name).map(BeliefValue::render)
        }
    };
    let fail = |reason: String| ConditionCheck { holds: false, reason };
    match cond {
        Condition::Role(name) => {
            if &role.name == name {
                ConditionCheck { holds: true, reason: String::new() }
            } else {
                fail(format!("role is {} not {name}", role.name))
            }
        }
        Condition::Tick { op, value } => {
            let holds = op.ordered(ev.tick as f64, *value as f64);
            ConditionCheck { holds, reason: format!("tick {} {} {value} is false", ev.tick, op.symbol()) }
        }
        Condition::Within { key, center, radius } => {
            let key = match bind_template(key, lookup) {
                Ok(k) => k,
                Err(e) => return fail(e),
            };
            match read_input(kb, &key, inputs).and_then(|v| v.as_position()) {
                Some(p) if p.distance(center) <= *radius => ConditionCheck { holds: true, reason: String::new() },
                Some(_) => fail(format!("{key} not within {radius} m of {center}")),
                None => fail(format!("{key} has no position")),
            }
        }
        Condition::Belief { key, op, value } => {
            let key = match bind_template(key, lookup) {
                Ok(k) => k,
                Err(e) => return fail(e),
            };
            let Some(lhs) = read_input(kb, &key, inputs) else {
                return fail(format!("{key} unknown"));
            };
            let rhs = match value {
                Operand::Literal(v) => v.clone(),
                Operand::Constraint(perm) => match role.constraint(perm) {
                    Some(c) => BeliefValue::Scalar(c),
                    None => return fail(format!("permission {perm} carries no constraint")),
                },
            };
            let holds = match (op, lhs.as_number(), rhs.as_number()) {
                (_, Some(a), Some(b)) => op.ordered(a, b),
                (CmpOp::Eq, _, _) => lhs == rhs,
                (CmpOp::Ne, _, _) => lhs != rhs,
                _ => false,
            };
            ConditionCheck { holds, reason: format!("{key}={lhs} {} {rhs} is false", op.symbol()) }
        }
    }
}

/// Evaluates every plan whose trigger matches `ev`, in declaration order.
pub fn evaluate_plans(library: &[PlanSpec], ev: &BdiEvent, kb: &KnowledgeBase, role: &Role) -> Vec<PlanEvaluation> {
    library
        .iter()
        .filter(|p| trigger_matches(&p.trigger, ev))
        .map(|p| {
            let mut inputs = Vec::new();
            let mut reason = String::new();
            let mut applicable = true;
            if ev.excluded.contains(&p.id) {
                applicable = false;
                reason = "failed earlier for this event".into();
            }
            if applicable {
                for cond in &p.precondition {
                    let c = check(cond, ev, kb, role, &mut inputs);
                    if !c.holds {
                        applicable = false;
                        reason = c.reason;
                        break;
                    }
                }
            }
            if applicable {
                if let Some(perm) = &p.required_permission {
                    if !role.is_granted(perm) {
                        applicable = false;
                        reason = format!("permission {perm} not granted");
                    }
                }
            }
            PlanEvaluation { plan: p.id.clone(), applicable, reason, inputs }
        })
        .collect()
}

/// Plans whose trigger matches, whose precondition holds, and whose required
/// permission (if any) is granted. Output keeps declaration order.
pub fn applicable_plans<'a>(
    library: &'a [PlanSpec],
    ev: &BdiEvent,
    kb: &KnowledgeBase,
    role: &Role,
) -> Vec<&'a PlanSpec> {
    let evals = evaluate_plans(library, ev, kb, role);
    library
        .iter()
        .filter(|p| evals.iter().any(|e| e.applicable && e.plan == p.id))
        .collect()
}

/// Meta-level choice among applicable plans. Must be a pure function of its inputs.
pub trait MetaPolicy {
    fn select<'a>(&self, candidates: &[&'a PlanSpec], kb: &KnowledgeBase) -> Option<&'a PlanSpec>;
}

/// Highest priority wins; ties go to the plan declared first.
#[derive(Debug, Clone, Copy, Default)]
pub struct PriorityThenOrder;

impl MetaPolicy for PriorityThenOrder {
    fn select<'a>(&self, candidates: &[&'a PlanSpec], _kb: &KnowledgeBase) -> Option<&'a PlanSpec> {
        let mut best: Option<&'a PlanSpec> = None;
        for &p in candidates {
            if best.is_none_or(|b| p.priority > b.priority) {
                best = Some(p);
            }
        }
        best
    }
}

pub fn select_plan<'a>(candidates: &[&'a PlanSpec], policy: &dyn MetaPolicy, kb: &KnowledgeBase) -> Option<&'a PlanSpec> {
    policy.select(candidates, kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdi::plan::PlanStep;
    use crate::kb::{Belief, Source};
    use crate::types::AgentId;

    fn uav1() -> AgentId {
        AgentId::from("UAV-1")
    }

    fn library() -> Vec<PlanSpec> {
        vec![
            PlanSpec::new("continue-tracking", Trigger::Signal(Some("low_battery".into())), "track_victim", vec![PlanStep::Capture("camera".into())])
                .with_priority(5),
            PlanSpec::new("rtl", Trigger::Signal(Some("low_battery".into())), "return_to_launch", vec![PlanStep::ReturnToLaunch])
                .with_priority(8)
                .requiring("auto_rtl"),
        ]
    }

    fn low_battery() -> BdiEvent {
        BdiEvent::signal("low_battery", 10, &uav1())
    }

    #[test]
    fn rtl_applicable_only_when_permitted() {
        let lib = library();
        let kb = KnowledgeBase::new(uav1());
        let granted = Role::new("track").with_permission("auto_rtl", true, None);
        let ids: Vec<_> = applicable_plans(&lib, &low_battery(), &kb, &granted).iter().map(|p| p.id.0.clone()).collect();
        assert_eq!(ids, ["continue-tracking", "rtl"]);

        let revoked = Role::new("track").with_permission("auto_rtl", false, None);
        let ids: Vec<_> = applicable_plans(&lib, &low_battery(), &kb, &revoked).iter().map(|p| p.id.0.clone()).collect();
        assert_eq!(ids, ["continue-tracking"]);
    }

    #[test]
    fn unmatched_event_yields_nothing() {
        let lib = library();
        let kb = KnowledgeBase::new(uav1());
        let ev = BdiEvent::signal("victim_detected", 0, &uav1());
        assert!(applicable_plans(&lib, &ev, &kb, &Role::new("track")).is_empty());
    }

    #[test]
    fn priority_then_declaration_order() {
        let lib = library();
        let kb = KnowledgeBase::new(uav1());
        let all: Vec<&PlanSpec> = lib.iter().collect();
        assert_eq!(select_plan(&all, &PriorityThenOrder, &kb).unwrap().id.0, "rtl");
        assert_eq!(select_plan(&all[..1], &PriorityThenOrder, &kb).unwrap().id.0, "continue-tracking");
        assert!(select_plan(&[], &PriorityThenOrder, &kb).is_none());

        let a = PlanSpec::new("a", Trigger::Signal(None), "g", vec![PlanStep::Land]).with_priority(3);
        let b = PlanSpec::new("b", Trigger::Signal(None), "g", vec![PlanStep::Land]).with_priority(3);
        assert_eq!(select_plan(&[&a, &b], &PriorityThenOrder, &kb).unwrap().id.0, "a");
    }

    #[test]
    fn constraint_operand_reads_role_threshold() {
        let plan = PlanSpec::new("auto-track", Trigger::Signal(Some("victim_detected".into())), "track_victim", vec![PlanStep::Land])
            .when(Condition::Belief {
                key: "victim.{victim}.confidence".into(),
                op: CmpOp::Ge,
                value: Operand::Constraint("track_without_confirmation".into()),
            });
        let lib = vec![plan];
        let mut kb = KnowledgeBase::new(uav1());
        kb.assert_belief(Belief::new("victim.v1.confidence", 2, BeliefValue::Scalar(0.55), Source::Sensor(uav1()), 0), 0)
            .unwrap();
        let ev = BdiEvent::signal("victim_detected", 0, &uav1()).with_param("victim", BeliefValue::Identifier("v1".into()));
        let role = Role::new("search").with_permission("track_without_confirmation", true, Some(0.6));
        let evals = evaluate_plans(&lib, &ev, &kb, &role);
        assert!(!evals[0].applicable);
        assert_eq!(evals[0].inputs[0].key, "victim.v1.confidence");

        kb.assert_belief(Belief::new("victim.v1.confidence", 2, BeliefValue::Scalar(0.9), Source::Sensor(uav1()), 1), 1)
            .unwrap();
        assert_eq!(applicable_plans(&lib, &ev, &kb, &role).len(), 1);
    }

    #[test]
    fn excluded_plans_are_skipped() {
        let lib = library();
        let kb = KnowledgeBase::new(uav1());
        let mut ev = low_battery();
        ev.excluded.push(PlanId::from("continue-tracking"));
        let role = Role::new("track").with_permission("auto_rtl", true, None);
        let ids: Vec<_> = applicable_plans(&lib, &ev, &kb, &role).iter().map(|p| p.id.0.clone()).collect();
        assert_eq!(ids, ["rtl"]);
    }
}
