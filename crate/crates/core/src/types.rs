//! Identifiers and geometry shared by every module.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulation tick. One tick is one second of simulated time.
pub type Tick = u64;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Agent (UAV) identifier, e.g. `UAV-1`. Agents are stepped in ascending order.
    AgentId
);
string_id!(
    /// Human operator identifier.
    OperatorId
);
string_id!(GoalId);
string_id!(PlanId);
string_id!(RequestId);
string_id!(DecisionId);

/// Rounds to the 6-decimal grid used by the log, so live state and a replayed
/// log agree exactly.
pub fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// A point in the 2D world, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn quantized(&self) -> Position {
        Position::new(quantize(self.x), quantize(self.y))
    }

    /// Moves toward `target` by at most `max_step` meters.
    pub fn step_toward(&self, target: &Position, max_step: f64) -> Position {
        let d = self.distance(target);
        if d <= max_step || d == 0.0 {
            *target
        } else {
            let f = max_step / d;
            Position::new(self.x + (target.x - self.x) * f, self.y + (target.y - self.y) * f)
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.1}, {:.1})", self.x, self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capped_step() {
        let p = Position::new(0.0, 0.0).step_toward(&Position::new(10.0, 0.0), 5.0);
        assert_eq!(p, Position::new(5.0, 0.0));
        let q = p.step_toward(&Position::new(10.0, 0.0), 5.0);
        assert_eq!(q, Position::new(10.0, 0.0));
    }
}
