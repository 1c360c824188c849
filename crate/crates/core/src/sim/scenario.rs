//! Scenario documents: schema, loading and cross-reference validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autonomy::{Permission, PermissionDecl, Scope};
use crate::bdi::{Capability, Condition, GoalType, Operand, PlanSpec};
use crate::event::canonical_string;
use crate::interaction::HumanInteraction;
use crate::kb::{Belief, BeliefValue};
use crate::types::{AgentId, Position, Tick};

use super::{Region, Victim};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub victims: Vec<Victim>,
    #[serde(default)]
    pub regions: Vec<Region>,
    /// Building faces to map (fire scenarios).
    #[serde(default)]
    pub faces: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub name: String,
    #[serde(rename = "type", default)]
    pub goal_type: GoalType,
    #[serde(default)]
    pub params: BTreeMap<String, BeliefValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: AgentId,
    pub role: String,
    pub library: String,
    pub position: Position,
    #[serde(default = "full_battery")]
    pub battery: f64,
    pub max_speed: f64,
    pub capabilities: BTreeSet<Capability>,
    #[serde(default)]
    pub goals: Vec<GoalSpec>,
    #[serde(default)]
    pub beliefs: Vec<Belief>,
}

fn full_battery() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermissionsSpec {
    pub vocabulary: Vec<PermissionDecl>,
    #[serde(default)]
    pub scoped: Vec<Permission>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorParams {
    /// Detection radius R, meters.
    pub range: f64,
    pub base: f64,
    /// Confidence lost at the edge of the range (k).
    pub slope: f64,
    /// Half-width of the uniform confidence noise.
    pub noise: f64,
    pub error_base: f64,
    pub error_region: f64,
    pub false_positive_rate: f64,
    pub reference_altitude: f64,
    /// Confidence lost per meter above the reference altitude.
    pub altitude_penalty: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            range: 30.0,
            base: 0.95,
            slope: 0.3,
            noise: 0.05,
            error_base: 3.0,
            error_region: 25.0,
            false_positive_rate: 0.0,
            reference_altitude: 40.0,
            altitude_penalty: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    /// Seconds a flotation delivery must beat the boat by.
    pub margin: f64,
    pub dedup_radius: f64,
    pub accuracy_limit: f64,
    pub override_window: Tick,
    pub confirmation_expiry: Tick,
    pub handling_time: f64,
    pub low_battery_threshold: f64,
    pub drain_base: f64,
    pub drain_move: f64,
    pub telemetry_period: Tick,
    pub max_ticks: Tick,
    pub arrival_tolerance: f64,
    pub capture_rate: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            margin: 30.0,
            dedup_radius: 10.0,
            accuracy_limit: 15.0,
            override_window: 10,
            confirmation_expiry: 120,
            handling_time: 20.0,
            low_battery_threshold: 20.0,
            drain_base: 0.05,
            drain_move: 0.1,
            telemetry_period: 5,
            max_ticks: 600,
            arrival_tolerance: 1.0,
            capture_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedDetection {
    pub agent: AgentId,
    pub victim: String,
    pub confidence: f64,
    #[serde(default)]
    pub position_error: f64,
    /// Reported position; defaults to the victim's true position.
    #[serde(default)]
    pub position: Option<Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Occurrence {
    InjectInteraction(HumanInteraction),
    PlaceVictim(Victim),
    /// Added to every victim's drift, meters per tick.
    SetWind(Position),
    ForceDetection(ForcedDetection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub tick: Tick,
    pub occurrence: Occurrence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    pub world: WorldSpec,
    pub roles: Vec<String>,
    pub permissions: PermissionsSpec,
    pub libraries: BTreeMap<String, Vec<PlanSpec>>,
    pub agents: Vec<AgentSpec>,
    /// Beliefs every agent starts with.
    #[serde(default)]
    pub beliefs: Vec<Belief>,
    #[serde(default)]
    pub sensor: SensorParams,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid scenario at {path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { path: path.into(), message: message.into() }
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: ScenarioSpec = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

impl ScenarioSpec {
    pub fn to_canonical(&self) -> String {
        canonical_string(&serde_json::to_value(self).expect("scenarios serialize"))
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| &a.id == id)
    }

    /// Resolves every cross-reference and structural invariant.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let roles: BTreeSet<&str> = self.roles.iter().map(String::as_str).collect();
        let mut vocab: BTreeMap<&str, &PermissionDecl> = BTreeMap::new();
        for (i, d) in self.permissions.vocabulary.iter().enumerate() {
            if vocab.insert(d.key.as_str(), d).is_some() {
                return Err(invalid(format!("permissions.vocabulary[{i}].key"), format!("duplicate key `{}`", d.key)));
            }
            if d.constraint.is_some() && !d.constrained {
                return Err(invalid(format!("permissions.vocabulary[{i}]"), "constraint on an unconstrained key"));
            }
        }
        let agent_ids: BTreeSet<&AgentId> = self.agents.iter().map(|a| &a.id).collect();
        if agent_ids.len() != self.agents.len() {
            return Err(invalid("agents", "agent ids must be unique"));
        }
        if self.agents.is_empty() {
            return Err(invalid("agents", "at least one agent is required"));
        }
        if self.world.width <= 0.0 || self.world.height <= 0.0 {
            return Err(invalid("world", "bounds must be positive"));
        }
        let in_bounds =
            |p: &Position| (0.0..=self.world.width).contains(&p.x) && (0.0..=self.world.height).contains(&p.y);

        for (i, p) in self.permissions.scoped.iter().enumerate() {
            let path = format!("permissions.scoped[{i}]");
            let decl = vocab.get(p.key.as_str()).ok_or_else(|| invalid(&path, format!("unknown permission key `{}`", p.key)))?;
            if p.constraint.is_some() && !decl.constrained {
                return Err(invalid(&path, format!("permission `{}` does not take a constraint", p.key)));
            }
            match &p.scope {
                Scope::Role(r) if !roles.contains(r.as_str()) => return Err(invalid(&path, format!("unknown role `{r}`"))),
                Scope::Agent(a) if !agent_ids.contains(a) => return Err(invalid(&path, format!("unknown agent `{a}`"))),
                _ => {}
            }
        }

        for (name, library) in &self.libraries {
            let mut ids = BTreeSet::new();
            for (i, plan) in library.iter().enumerate() {
                let path = format!("libraries.{name}[{i}]");
                if !ids.insert(&plan.id) {
                    return Err(invalid(&path, format!("duplicate plan id `{}`", plan.id)));
                }
                plan.validate().map_err(|m| invalid(&path, m))?;
                if let Some(perm) = &plan.required_permission {
                    if !vocab.contains_key(perm.as_str()) {
                        return Err(invalid(format!("{path}.required_permission"), format!("unknown permission key `{perm}`")));
                    }
                }
                if let Some(r) = &plan.role {
                    if !roles.contains(r.as_str()) {
                        return Err(invalid(format!("{path}.role"), format!("unknown role `{r}`")));
                    }
                }
                for (j, c) in plan.precondition.iter().enumerate() {
                    match c {
                        Condition::Belief { value: Operand::Constraint(k), .. } => match vocab.get(k.as_str()) {
                            Some(d) if d.constrained => {}
                            Some(_) => {
                                return Err(invalid(format!("{path}.precondition[{j}]"), format!("permission `{k}` carries no constraint")))
                            }
                            None => {
                                return Err(invalid(format!("{path}.precondition[{j}]"), format!("unknown permission key `{k}`")))
                            }
                        },
                        Condition::Role(r) if !roles.contains(r.as_str()) => {
                            return Err(invalid(format!("{path}.precondition[{j}]"), format!("unknown role `{r}`")))
                        }
                        _ => {}
                    }
                }
            }
        }

        for (i, a) in self.agents.iter().enumerate() {
            let path = format!("agents[{i}]");
            if !roles.contains(a.role.as_str()) {
                return Err(invalid(format!("{path}.role"), format!("unknown role `{}`", a.role)));
            }
            if !self.libraries.contains_key(&a.library) {
                return Err(invalid(format!("{path}.library"), format!("unknown library `{}`", a.library)));
            }
            if !in_bounds(&a.position) {
                return Err(invalid(format!("{path}.position"), "outside world bounds"));
            }
            if !(0.0..=100.0).contains(&a.battery) {
                return Err(invalid(format!("{path}.battery"), "battery must be within 0..=100"));
            }
            if a.max_speed <= 0.0 {
                return Err(invalid(format!("{path}.max_speed"), "must be positive"));
            }
            for (j, b) in a.beliefs.iter().enumerate() {
                b.validate().map_err(|e| invalid(format!("{path}.beliefs[{j}]"), e.to_string()))?;
            }
        }
        for (j, b) in self.beliefs.iter().enumerate() {
            b.validate().map_err(|e| invalid(format!("beliefs[{j}]"), e.to_string()))?;
            if b.tick != 0 {
                return Err(invalid(format!("beliefs[{j}].tick"), "initial beliefs must be stamped at tick 0"));
            }
        }
        for (i, v) in self.world.victims.iter().enumerate() {
            if !in_bounds(&v.position) {
                return Err(invalid(format!("world.victims[{i}].position"), "outside world bounds"));
            }
        }

        let mut victims: BTreeSet<&str> = self.world.victims.iter().map(|v| v.id.as_str()).collect();
        let mut last = 0;
        for (i, e) in self.script.iter().enumerate() {
            let path = format!("script[{i}]");
            if e.tick < last {
                return Err(invalid(format!("{path}.tick"), "script must be sorted by tick"));
            }
            last = e.tick;
            match &e.occurrence {
                Occurrence::InjectInteraction(hi) => {
                    hi.validate().map_err(|m| invalid(format!("{path}.occurrence"), m))?;
                }
                Occurrence::PlaceVictim(v) => {
                    victims.insert(v.id.as_str());
                }
                Occurrence::ForceDetection(f) => {
                    if !agent_ids.contains(&f.agent) {
                        return Err(invalid(format!("{path}.occurrence"), format!("unknown agent `{}`", f.agent)));
                    }
                    if !victims.contains(f.victim.as_str()) {
                        return Err(invalid(format!("{path}.occurrence"), format!("unknown victim `{}`", f.victim)));
                    }
                    if !(0.0..=1.0).contains(&f.confidence) || f.position_error < 0.0 {
                        return Err(invalid(format!("{path}.occurrence"), "confidence in 0..=1 and error >= 0 required"));
                    }
                }
                Occurrence::SetWind(_) => {}
            }
        }
        if self.constants.telemetry_period == 0 {
            return Err(invalid("constants.telemetry_period", "must be positive"));
        }
        if self.constants.dedup_radius <= 0.0 {
            return Err(invalid("constants.dedup_radius", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::fixture;

    #[test]
    fn rtl_fixture_shape() {
        let spec = load_scenario(fixture("s5_rtl_override").unwrap().scenario).unwrap();
        assert_eq!(spec.agents.len(), 1);
        let lib = &spec.libraries[&spec.agents[0].library];
        for id in ["continue-tracking", "rtl"] {
            assert!(lib.iter().any(|p| p.id.as_str() == id));
        }
        let revoke = spec.script.iter().find_map(|e| match &e.occurrence {
            Occurrence::InjectInteraction(hi) => Some((e.tick, hi)),
            _ => None,
        });
        let (tick, hi) = revoke.unwrap();
        assert_eq!(tick, 80);
        assert!(matches!(
            &hi.body,
            crate::interaction::InteractionBody::ChangedPermission { change } if change.key == "auto_rtl" && !change.granted
        ));
    }

    #[test]
    fn unknown_permission_key_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(fixture("s5_rtl_override").unwrap().scenario).unwrap();
        v["permissions"]["scoped"] = serde_json::json!([{ "key": "fly_to_moon", "granted": true, "scope": "mission" }]);
        let err = load_scenario(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("fly_to_moon"), "{err}");
    }

    #[test]
    fn schema_errors_carry_a_path() {
        let mut v: serde_json::Value = serde_json::from_str(fixture("s5_rtl_override").unwrap().scenario).unwrap();
        v["agents"][0]["max_speed"] = serde_json::json!("fast");
        match load_scenario(&v.to_string()).unwrap_err() {
            ScenarioError::Schema { path, .. } => assert_eq!(path, "agents[0].max_speed"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn every_fixture_round_trips() {
        for name in crate::sim::FIXTURES {
            let spec = load_scenario(fixture(name).unwrap().scenario).unwrap();
            let canonical = spec.to_canonical();
            let again = load_scenario(&canonical).unwrap();
            assert_eq!(again, spec, "{name}");
            assert_eq!(again.to_canonical(), canonical, "{name}");
        }
    }
}
