//! Roles, permissions and run-time autonomy adjustment.
//!
//! Autonomy is represented by the set of granted permissions. A permission may
//! be defined at mission, role or agent scope; the most specific definition
//! wins. Changes are recorded as overrides on top of the scenario's table and
//! only affect dispatch from the next reasoning step on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::event::{EventKind, MissionEvent};
use crate::types::{AgentId, OperatorId, Tick};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Agent(AgentId),
    Role(String),
    Mission,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Agent(a) => write!(f, "agent:{a}"),
            Scope::Role(r) => write!(f, "role:{r}"),
            Scope::Mission => f.write_str("mission"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Permission {
    pub key: String,
    pub granted: bool,
    #[serde(default)]
    pub constraint: Option<f64>,
    pub scope: Scope,
}

/// Vocabulary entry: the key, its mission default, and whether it carries a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermissionDecl {
    pub key: String,
    pub granted: bool,
    #[serde(default)]
    pub constrained: bool,
    #[serde(default)]
    pub constraint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermissionChange {
    pub key: String,
    pub granted: bool,
    #[serde(default)]
    pub constraint: Option<f64>,
    pub scope: Scope,
    pub issuer: OperatorId,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutonomyError {
    #[error("unknown permission key `{0}`")]
    UnknownKey(String),
    #[error("cannot resolve scope {0}")]
    UnresolvableScope(Scope),
    #[error("permission `{0}` does not take a constraint")]
    UnexpectedConstraint(String),
}

/// A role together with the permissions resolved for one agent holding it.
#[derive(Debug, Clone, PartialEq)]
pub struct Role {
    pub name: String,
    pub permissions: BTreeMap<String, Permission>,
}

impl Role {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), permissions: BTreeMap::new() }
    }

    pub fn with_permission(mut self, key: &str, granted: bool, constraint: Option<f64>) -> Self {
        self.permissions
            .insert(key.to_string(), Permission { key: key.to_string(), granted, constraint, scope: Scope::Mission });
        self
    }

    pub fn is_granted(&self, key: &str) -> bool {
        self.permissions.get(key).is_some_and(|p| p.granted)
    }

    pub fn constraint(&self, key: &str) -> Option<f64> {
        self.permissions.get(key).and_then(|p| p.constraint)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PermissionTable {
    vocabulary: BTreeMap<String, PermissionDecl>,
    roles: BTreeSet<String>,
    base: BTreeMap<(Scope, String), Permission>,
    overrides: BTreeMap<(Scope, String), Permission>,
}

impl PermissionTable {
    pub fn new(
        vocabulary: impl IntoIterator<Item = PermissionDecl>,
        roles: impl IntoIterator<Item = String>,
        scoped: impl IntoIterator<Item = Permission>,
    ) -> Self {
        let vocabulary = vocabulary.into_iter().map(|d| (d.key.clone(), d)).collect();
        let base = scoped.into_iter().map(|p| ((p.scope.clone(), p.key.clone()), p)).collect();
        Self { vocabulary, roles: roles.into_iter().collect(), base, overrides: BTreeMap::new() }
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &PermissionDecl> {
        self.vocabulary.values()
    }

    pub fn knows(&self, key: &str) -> bool {
        self.vocabulary.contains_key(key)
    }

    /// Runtime changes applied on top of the scenario table.
    pub fn overrides(&self) -> &BTreeMap<(Scope, String), Permission> {
        &self.overrides
    }

    fn at_scope(&self, scope: &Scope, key: &str) -> Option<&Permission> {
        let k = (scope.clone(), key.to_string());
        self.overrides.get(&k).or_else(|| self.base.get(&k))
    }

    /// Resolves `key` for an agent holding `role`: agent > role > mission > vocabulary default.
    pub fn effective(&self, agent: &AgentId, role: &str, key: &str) -> Result<Permission, AutonomyError> {
        let decl = self.vocabulary.get(key).ok_or_else(|| AutonomyError::UnknownKey(key.to_string()))?;
        let found = self
            .at_scope(&Scope::Agent(agent.clone()), key)
            .or_else(|| self.at_scope(&Scope::Role(role.to_string()), key))
            .or_else(|| self.at_scope(&Scope::Mission, key));
        Ok(found.cloned().unwrap_or_else(|| Permission {
            key: key.to_string(),
            granted: decl.granted,
            constraint: decl.constraint,
            scope: Scope::Mission,
        }))
    }

    /// Value in force at `scope` itself, falling back to broader scopes.
    fn resolved_at(&self, scope: &Scope, key: &str) -> Option<Permission> {
        let decl = self.vocabulary.get(key)?;
        let chain: Vec<Scope> = match scope {
            Scope::Agent(_) => return None,
            Scope::Role(_) => vec![scope.clone(), Scope::Mission],
            Scope::Mission => vec![Scope::Mission],
        };
        chain
            .iter()
            .find_map(|s| self.at_scope(s, key).cloned())
            .or_else(|| {
                Some(Permission { key: key.into(), granted: decl.granted, constraint: decl.constraint, scope: Scope::Mission })
            })
    }

    /// Builds the agent's role with every vocabulary key resolved.
    pub fn resolve_role(&self, agent: &AgentId, role: &str) -> Role {
        let permissions = self
            .vocabulary
            .keys()
            .map(|k| (k.clone(), self.effective(agent, role, k).expect("vocabulary key")))
            .collect();
        Role { name: role.to_string(), permissions }
    }

    /// Records a permission change. `agent_role` resolves the current role of an
    /// agent (so the event can report the value previously in force), and
    /// returns `None` for unknown agents.
    pub fn apply_change(
        &mut self,
        ch: &PermissionChange,
        agent_role: impl Fn(&AgentId) -> Option<String>,
        now: Tick,
    ) -> Result<MissionEvent, AutonomyError> {
        let decl = self.vocabulary.get(&ch.key).ok_or_else(|| AutonomyError::UnknownKey(ch.key.clone()))?;
        if ch.constraint.is_some() && !decl.constrained {
            return Err(AutonomyError::UnexpectedConstraint(ch.key.clone()));
        }
        let old = match &ch.scope {
            Scope::Agent(a) => {
                let role = agent_role(a).ok_or_else(|| AutonomyError::UnresolvableScope(ch.scope.clone()))?;
                self.effective(a, &role, &ch.key)?
            }
            Scope::Role(r) => {
                if !self.roles.contains(r) {
                    return Err(AutonomyError::UnresolvableScope(ch.scope.clone()));
                }
                self.resolved_at(&ch.scope, &ch.key).expect("key in vocabulary")
            }
            Scope::Mission => self.resolved_at(&ch.scope, &ch.key).expect("key in vocabulary"),
        };
        // A granted change without an explicit threshold keeps the current one.
        let constraint = if decl.constrained { ch.constraint.or(old.constraint) } else { None };
        let new = Permission { key: ch.key.clone(), granted: ch.granted, constraint, scope: ch.scope.clone() };
        self.overrides.insert((ch.scope.clone(), ch.key.clone()), new.clone());
        let agent = match &ch.scope {
            Scope::Agent(a) => Some(a.clone()),
            _ => None,
        };
        Ok(MissionEvent::new(
            now,
            EventKind::PermissionChanged,
            agent,
            json!({
                "key": ch.key,
                "scope": ch.scope,
                "issuer": ch.issuer,
                "old": { "granted": old.granted, "constraint": old.constraint },
                "new": { "granted": new.granted, "constraint": new.constraint },
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> PermissionTable {
        PermissionTable::new(
            vec![
                PermissionDecl { key: "auto_rtl".into(), granted: true, constrained: false, constraint: None },
                PermissionDecl { key: "act_as_replacement".into(), granted: true, constrained: false, constraint: None },
                PermissionDecl {
                    key: "track_without_confirmation".into(),
                    granted: true,
                    constrained: true,
                    constraint: Some(0.6),
                },
            ],
            vec!["search".to_string(), "track".to_string()],
            vec![],
        )
    }

    fn change(key: &str, granted: bool, scope: Scope) -> PermissionChange {
        PermissionChange { key: key.into(), granted, constraint: None, scope, issuer: "ic".into(), tick: 0 }
    }

    fn role_of(_: &AgentId) -> Option<String> {
        Some("search".into())
    }

    #[test]
    fn agent_scope_beats_mission() {
        let mut t = table();
        let uav3 = AgentId::from("UAV-3");
        t.apply_change(&change("act_as_replacement", false, Scope::Agent(uav3.clone())), role_of, 0).unwrap();
        assert!(!t.effective(&uav3, "search", "act_as_replacement").unwrap().granted);
        assert!(t.effective(&"UAV-2".into(), "search", "act_as_replacement").unwrap().granted);
    }

    #[test]
    fn mission_only_definition() {
        let t = table();
        let p = t.effective(&"UAV-1".into(), "search", "auto_rtl").unwrap();
        assert!(p.granted);
        assert_eq!(p.scope, Scope::Mission);
    }

    #[test]
    fn role_scope_fans_out() {
        let mut t = table();
        t.apply_change(&change("auto_rtl", false, Scope::Role("track".into())), role_of, 0).unwrap();
        assert!(!t.effective(&"UAV-1".into(), "track", "auto_rtl").unwrap().granted);
        assert!(!t.effective(&"UAV-2".into(), "track", "auto_rtl").unwrap().granted);
        assert!(t.effective(&"UAV-3".into(), "search", "auto_rtl").unwrap().granted);
    }

    #[test]
    fn change_event_carries_old_and_new() {
        let mut t = table();
        let ev = t.apply_change(&change("auto_rtl", false, Scope::Agent("UAV-1".into())), role_of, 4).unwrap();
        assert_eq!(ev.kind, EventKind::PermissionChanged);
        assert_eq!(ev.payload["old"]["granted"], json!(true));
        assert_eq!(ev.payload["new"]["granted"], json!(false));
        assert_eq!(ev.tick, 4);
    }

    #[test]
    fn rejects_unknown_key_and_scope() {
        let mut t = table();
        let before = t.clone();
        assert_eq!(
            t.apply_change(&change("fly_to_moon", true, Scope::Mission), role_of, 0),
            Err(AutonomyError::UnknownKey("fly_to_moon".into()))
        );
        assert!(matches!(
            t.apply_change(&change("auto_rtl", true, Scope::Role("pilot".into())), role_of, 0),
            Err(AutonomyError::UnresolvableScope(_))
        ));
        assert!(matches!(
            t.apply_change(&change("auto_rtl", true, Scope::Agent("UAV-9".into())), |_| None, 0),
            Err(AutonomyError::UnresolvableScope(_))
        ));
        assert_eq!(t, before);
    }

    #[test]
    fn constraint_only_on_constrained_keys() {
        let mut t = table();
        let mut ch = change("auto_rtl", true, Scope::Mission);
        ch.constraint = Some(0.5);
        assert!(matches!(t.apply_change(&ch, role_of, 0), Err(AutonomyError::UnexpectedConstraint(_))));
        let mut ch = change("track_without_confirmation", true, Scope::Mission);
        ch.constraint = Some(0.8);
        t.apply_change(&ch, role_of, 0).unwrap();
        let role = t.resolve_role(&"UAV-1".into(), "search");
        assert_eq!(role.constraint("track_without_confirmation"), Some(0.8));
    }

    #[test]
    fn regrant_restores_permission() {
        let mut t = table();
        let a = AgentId::from("UAV-1");
        t.apply_change(&change("auto_rtl", false, Scope::Agent(a.clone())), role_of, 0).unwrap();
        assert!(!t.resolve_role(&a, "track").is_granted("auto_rtl"));
        t.apply_change(&change("auto_rtl", true, Scope::Agent(a.clone())), role_of, 1).unwrap();
        assert!(t.resolve_role(&a, "track").is_granted("auto_rtl"));
    }
}
