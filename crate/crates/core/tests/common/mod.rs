//! Random plan libraries and an independent applicability oracle.
#![allow(dead_code)]

use hotl_core::autonomy::Role;
use hotl_core::bdi::{CmpOp, Condition, Operand, PlanStep, Trigger};
use hotl_core::{AgentId, BdiEvent, Belief, BeliefValue, KnowledgeBase, PlanSpec, Source};
use proptest::prelude::*;

pub const SIGNALS: [&str; 3] = ["low_battery", "victim_detected", "smoke"];
pub const KEYS: [&str; 5] = ["k0", "k1", "k2", "k3", "k4"];
pub const PERMS: [&str; 2] = ["p0", "p1"];
const OPS: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];

/// Plain description of a generated case, kept separate from engine types so
/// the oracle never reuses engine logic.
#[derive(Debug, Clone)]
pub struct PlanDesc {
    pub signal: Option<usize>,
    /// (key, op, rhs) where rhs is a literal or the constraint of a permission.
    pub conds: Vec<(usize, usize, Rhs)>,
    pub permission: Option<usize>,
    pub priority: i32,
}

#[derive(Debug, Clone, Copy)]
pub enum Rhs {
    Literal(i32),
    Constraint(usize),
}

#[derive(Debug, Clone)]
pub struct Case {
    pub plans: Vec<PlanDesc>,
    pub kb: Vec<Option<i32>>,
    /// Per permission: (granted, constraint).
    pub perms: Vec<(bool, Option<i32>)>,
    pub signal: usize,
}

fn rhs() -> impl Strategy<Value = Rhs> {
    prop_oneof![4 => (0..4i32).prop_map(Rhs::Literal), 1 => (0..PERMS.len()).prop_map(Rhs::Constraint)]
}

fn plan_desc() -> impl Strategy<Value = PlanDesc> {
    (
        prop::option::weighted(0.85, 0..SIGNALS.len()),
        prop::collection::vec((0..KEYS.len(), 0..OPS.len(), rhs()), 0..3),
        prop::option::of(0..PERMS.len()),
        0..3i32,
    )
        .prop_map(|(signal, conds, permission, priority)| PlanDesc { signal, conds, permission, priority })
}

pub fn case() -> impl Strategy<Value = Case> {
    (
        prop::collection::vec(plan_desc(), 1..=4),
        prop::collection::vec(prop::option::weighted(0.8, 0..4i32), KEYS.len()),
        prop::collection::vec((any::<bool>(), prop::option::of(0..4i32)), PERMS.len()),
        0..SIGNALS.len(),
    )
        .prop_map(|(plans, kb, perms, signal)| Case { plans, kb, perms, signal })
}

pub fn uav() -> AgentId {
    AgentId::from("UAV-1")
}

impl Case {
    pub fn library(&self) -> Vec<PlanSpec> {
        self.plans
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let trigger = Trigger::Signal(d.signal.map(|s| SIGNALS[s].to_string()));
                let mut p = PlanSpec::new(&format!("plan-{i}"), trigger, "g", vec![PlanStep::Land]).with_priority(d.priority);
                for &(k, op, rhs) in &d.conds {
                    let value = match rhs {
                        Rhs::Literal(v) => Operand::Literal(BeliefValue::Scalar(v as f64)),
                        Rhs::Constraint(p) => Operand::Constraint(PERMS[p].to_string()),
                    };
                    p = p.when(Condition::Belief { key: KEYS[k].to_string(), op: OPS[op], value });
                }
                if let Some(perm) = d.permission {
                    p = p.requiring(PERMS[perm]);
                }
                p
            })
            .collect()
    }

    pub fn kb(&self) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(uav());
        for (i, v) in self.kb.iter().enumerate() {
            if let Some(v) = v {
                let b = Belief::new(KEYS[i], 1, BeliefValue::Scalar(*v as f64), Source::Sensor(uav()), 0);
                kb.assert_belief(b, 0).unwrap();
            }
        }
        kb
    }

    pub fn role(&self) -> Role {
        let mut role = Role::new("r");
        for (i, (granted, c)) in self.perms.iter().enumerate() {
            role = role.with_permission(PERMS[i], *granted, c.map(f64::from));
        }
        role
    }

    pub fn event(&self) -> BdiEvent {
        BdiEvent::signal(SIGNALS[self.signal], 1, &uav())
    }

    /// Indices of applicable plans, computed directly from the description.
    pub fn oracle_applicable(&self) -> Vec<usize> {
        let cmp = |op: usize, a: i32, b: i32| match op {
            0 => a == b,
            1 => a != b,
            2 => a < b,
            3 => a <= b,
            4 => a > b,
            _ => a >= b,
        };
        (0..self.plans.len())
            .filter(|&i| {
                let d = &self.plans[i];
                if d.signal.is_some_and(|s| s != self.signal) {
                    return false;
                }
                let conds_hold = d.conds.iter().all(|&(k, op, rhs)| {
                    let Some(lhs) = self.kb[k] else { return false };
                    let rhs = match rhs {
                        Rhs::Literal(v) => v,
                        Rhs::Constraint(p) => match self.perms[p].1 {
                            Some(c) => c,
                            None => return false,
                        },
                    };
                    cmp(op, lhs, rhs)
                });
                conds_hold && d.permission.is_none_or(|p| self.perms[p].0)
            })
            .collect()
    }

    /// Highest priority, earliest declared.
    pub fn oracle_choice(&self) -> Option<usize> {
        let app = self.oracle_applicable();
        let best = app.iter().map(|&i| self.plans[i].priority).max()?;
        app.into_iter().find(|&i| self.plans[i].priority == best)
    }
}
