//! Deterministic tick-based world: point kinematics, battery, a parametric
//! detection sensor, and building-face coverage.

mod fixtures;
mod scenario;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bdi::{ActionKind, Bounds, Capability, PrimitiveAction};
use crate::coordination::Detection;
use crate::event::{EventKind, MissionEvent};
use crate::types::{quantize, AgentId, Position, Tick};

pub use fixtures::{fixture, Fixture, FIXTURES};
pub use scenario::{
    load_scenario, AgentSpec, Constants, ForcedDetection, GoalSpec, Occurrence, PermissionsSpec, ScenarioError,
    ScenarioSpec, ScriptEntry, SensorParams, WorldSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Victim {
    pub id: String,
    pub position: Position,
    /// Meters per tick.
    #[serde(default)]
    pub drift: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle { center: Position, radius: f64 },
    Rect { min: Position, max: Position },
}

impl Shape {
    pub fn contains(&self, p: &Position) -> bool {
        match self {
            Shape::Circle { center, radius } => center.distance(p) <= *radius,
            Shape::Rect { min, max } => (min.x..=max.x).contains(&p.x) && (min.y..=max.y).contains(&p.y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    Strainer,
    Smoke,
    Hotspot,
    SearchArea,
    /// Geolocation is poor here (canopy, glare); detections carry a larger error.
    LowAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub kind: RegionKind,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UavPhysical {
    pub id: AgentId,
    pub position: Position,
    pub velocity: Position,
    /// Percent, 0..=100.
    pub battery: f64,
    pub capabilities: BTreeSet<Capability>,
    pub max_speed: f64,
    pub mode: String,
    pub launch: Position,
    pub target: Option<Position>,
    pub landed: bool,
    last_capture: Option<(Capability, Option<String>)>,
}

impl UavPhysical {
    pub fn new(id: AgentId, position: Position, battery: f64, max_speed: f64, capabilities: BTreeSet<Capability>, mode: &str) -> Self {
        Self {
            id,
            position,
            velocity: Position::default(),
            battery,
            capabilities,
            max_speed,
            mode: mode.to_string(),
            launch: position,
            target: None,
            landed: false,
            last_capture: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldParams {
    pub drain_base: f64,
    pub drain_move: f64,
    pub low_battery_threshold: f64,
    pub capture_rate: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TickReport {
    pub events: Vec<MissionEvent>,
    /// Internal signals raised by the world, e.g. `low_battery`.
    pub signals: Vec<(AgentId, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: Tick,
    pub bounds: Bounds,
    pub uavs: BTreeMap<AgentId, UavPhysical>,
    pub victims: Vec<Victim>,
    pub regions: Vec<Region>,
    pub wind: Position,
    /// Mapping coverage per building face, 0..=1.
    pub coverage: BTreeMap<String, f64>,
    pub params: WorldParams,
    rng: ChaCha8Rng,
}

impl WorldState {
    pub fn new(bounds: Bounds, seed: u64, params: WorldParams) -> Self {
        Self {
            tick: 0,
            bounds,
            uavs: BTreeMap::new(),
            victims: Vec::new(),
            regions: Vec::new(),
            wind: Position::default(),
            coverage: BTreeMap::new(),
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn clamp(&self, p: Position) -> Position {
        Position::new(p.x.clamp(0.0, self.bounds.width), p.y.clamp(0.0, self.bounds.height))
    }

    pub fn victim(&self, id: &str) -> Option<&Victim> {
        self.victims.iter().find(|v| v.id == id)
    }

    pub fn place_victim(&mut self, v: Victim) {
        let v = Victim { position: self.clamp(v.position), ..v };
        match self.victims.iter_mut().find(|x| x.id == v.id) {
            Some(slot) => *slot = v,
            None => self.victims.push(v),
        }
    }

    /// Applies `actions`, advances kinematics, battery and victim drift by one tick.
    pub fn tick(&mut self, actions: &[PrimitiveAction]) -> TickReport {
        let now = self.tick;
        let mut report = TickReport::default();
        for a in actions {
            let capture_rate = self.params.capture_rate;
            let Some(uav) = self.uavs.get_mut(&a.agent) else {
                report.events.push(MissionEvent::error(
                    now,
                    Some(a.agent.clone()),
                    "unknown-agent",
                    format!("action for unknown agent {}", a.agent),
                ));
                continue;
            };
            let logged = match &a.kind {
                ActionKind::MoveTo(p) => {
                    let changed = uav.target != Some(*p) || uav.landed;
                    uav.target = Some(*p);
                    uav.landed = false;
                    changed.then(|| json!({ "action": "move-to", "target": p }))
                }
                ActionKind::ReturnToLaunch => {
                    let changed = uav.target != Some(uav.launch) || uav.landed;
                    uav.target = Some(uav.launch);
                    uav.landed = false;
                    changed.then(|| json!({ "action": "return-to-launch", "target": uav.launch }))
                }
                ActionKind::Hold => uav.target.take().map(|_| json!({ "action": "hold", "position": uav.position })),
                ActionKind::SetMode(m) => (uav.mode != *m).then(|| {
                    uav.mode = m.clone();
                    json!({ "action": "set-mode", "mode": m })
                }),
                ActionKind::Land => (!uav.landed).then(|| {
                    uav.landed = true;
                    uav.target = None;
                    json!({ "action": "land", "position": uav.position })
                }),
                ActionKind::Deliver(payload) => {
                    Some(json!({ "action": "deliver", "payload": payload, "position": uav.position }))
                }
                ActionKind::Capture { sensor, subject } => {
                    if *sensor == Capability::Camera {
                        if let Some(faces) = subject {
                            for f in faces.split(',') {
                                if let Some(c) = self.coverage.get_mut(f) {
                                    *c = quantize((*c + capture_rate).min(1.0));
                                }
                            }
                        }
                    }
                    let key = (*sensor, subject.clone());
                    (uav.last_capture.as_ref() != Some(&key)).then(|| {
                        uav.last_capture = Some(key);
                        json!({ "action": "capture", "sensor": sensor, "subject": subject })
                    })
                }
            };
            if let Some(payload) = logged {
                report.events.push(MissionEvent::new(now, EventKind::ActionExecuted, Some(a.agent.clone()), payload));
            }
        }

        let p = self.params;
        let bounds = self.bounds;
        for uav in self.uavs.values_mut() {
            let before = uav.position;
            if !uav.landed {
                if let Some(t) = uav.target {
                    let next = before.step_toward(&t, uav.max_speed);
                    let next = Position::new(next.x.clamp(0.0, bounds.width), next.y.clamp(0.0, bounds.height));
                    let mut q = next.quantized();
                    if before.distance(&q) > uav.max_speed {
                        // Rounding outward would overshoot; round the step toward the start instead.
                        let toward = |from: f64, to: f64| from + ((to - from) * 1e6).trunc() / 1e6;
                        q = Position::new(toward(before.x, next.x), toward(before.y, next.y)).quantized();
                    }
                    uav.position = q;
                }
            }
            uav.velocity = Position::new(uav.position.x - before.x, uav.position.y - before.y).quantized();
            let moved = uav.position != before;
            let drain = if uav.landed { 0.0 } else { p.drain_base + if moved { p.drain_move } else { 0.0 } };
            let was_above = uav.battery >= p.low_battery_threshold;
            uav.battery = quantize((uav.battery - drain).max(0.0));
            if was_above && uav.battery < p.low_battery_threshold {
                report.signals.push((uav.id.clone(), "low_battery".into()));
            }
        }

        let wind = self.wind;
        for i in 0..self.victims.len() {
            let v = &self.victims[i];
            let next = Position::new(v.position.x + v.drift.x + wind.x, v.position.y + v.drift.y + wind.y);
            self.victims[i].position = self.clamp(next).quantized();
        }
        self.tick += 1;
        report
    }

    /// Parametric camera model for one UAV. Returns the nearest in-range victim
    /// not excluded by `skip`, and possibly a false positive. Draws from the
    /// shared rng only when noise or false positives are configured.
    pub fn simulate_detection(
        &mut self,
        agent: &AgentId,
        sensor: &SensorParams,
        altitude: f64,
        skip: impl Fn(&str) -> bool,
    ) -> Vec<Detection> {
        let mut out = Vec::new();
        let Some(uav) = self.uavs.get(agent) else { return out };
        if uav.landed || !uav.capabilities.contains(&Capability::Camera) || sensor.range <= 0.0 {
            return out;
        }
        let here = uav.position;
        let nearest = self
            .victims
            .iter()
            .filter(|v| !skip(&v.id))
            .map(|v| (v.position.distance(&here), v))
            .filter(|(d, _)| *d <= sensor.range)
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)))
            .map(|(d, v)| (d, v.id.clone(), v.position));
        let in_low_accuracy =
            |p: &Position| self.regions.iter().any(|r| r.kind == RegionKind::LowAccuracy && r.shape.contains(p));
        let base = sensor.base - sensor.altitude_penalty * (altitude - sensor.reference_altitude);
        if let Some((d, victim, position)) = nearest {
            let error = sensor.error_base + if in_low_accuracy(&position) { sensor.error_region } else { 0.0 };
            let noise = if sensor.noise > 0.0 { self.rng.random_range(-sensor.noise..=sensor.noise) } else { 0.0 };
            let confidence = quantize((base - sensor.slope * d / sensor.range + noise).clamp(0.0, 1.0));
            out.push(Detection {
                id: String::new(),
                agent: agent.clone(),
                position,
                confidence,
                position_error: error,
                tick: self.tick,
                victim,
            });
        }
        if sensor.false_positive_rate > 0.0 && self.rng.random::<f64>() < sensor.false_positive_rate {
            let angle = self.rng.random_range(0.0..std::f64::consts::TAU);
            let r = self.rng.random_range(0.0..sensor.range);
            let position = self.clamp(Position::new(here.x + r * angle.cos(), here.y + r * angle.sin())).quantized();
            let confidence = quantize(self.rng.random_range(0.0..base.clamp(0.0, 1.0).max(f64::MIN_POSITIVE)));
            let error = sensor.error_base + if in_low_accuracy(&position) { sensor.error_region } else { 0.0 };
            out.push(Detection {
                id: String::new(),
                agent: agent.clone(),
                position,
                confidence,
                position_error: error,
                tick: self.tick,
                victim: format!("fp-{}-{}", self.tick, agent),
            });
        }
        out
    }
}
