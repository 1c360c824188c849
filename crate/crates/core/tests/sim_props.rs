use std::collections::BTreeSet;

use hotl_core::bdi::{ActionKind, Bounds, Capability, PrimitiveAction};
use hotl_core::sim::{UavPhysical, WorldParams, WorldState};
use hotl_core::{fixture, load_scenario, run_headless, AgentId, EventKind, Position};
use proptest::prelude::*;

fn world(seed: u64, battery: f64, drain: f64) -> WorldState {
    let params = WorldParams { drain_base: drain, drain_move: 0.0, low_battery_threshold: 20.0, capture_rate: 0.1 };
    let mut w = WorldState::new(Bounds { width: 1000.0, height: 1000.0 }, seed, params);
    let id = AgentId::from("UAV-1");
    let caps: BTreeSet<Capability> = [Capability::Camera].into();
    w.uavs.insert(id.clone(), UavPhysical::new(id, Position::new(10.0, 10.0), battery, 10.0, caps, "search"));
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn low_battery_fires_once_per_downward_crossing(battery in 0.0..100.0f64, drain in 0.0..2.0f64, ticks in 1..80usize) {
        let mut w = world(1, battery, drain);
        let mut signals = 0;
        for _ in 0..ticks {
            signals += w.tick(&[]).signals.len();
        }
        let end = w.uavs.values().next().unwrap().battery;
        let crossed = battery >= 20.0 && end < 20.0;
        prop_assert_eq!(signals, usize::from(crossed));
    }

    #[test]
    fn moves_never_exceed_max_speed(tx in 0.0..1000.0f64, ty in 0.0..1000.0f64, ticks in 1..30usize) {
        let mut w = world(2, 100.0, 0.1);
        let id = AgentId::from("UAV-1");
        let target = Position::new(tx, ty);
        let mut prev = Position::new(10.0, 10.0);
        for _ in 0..ticks {
            w.tick(&[PrimitiveAction { agent: id.clone(), kind: ActionKind::MoveTo(target) }]);
            let now = w.uavs[&id].position;
            prop_assert!(prev.distance(&now) <= 10.0 + 1e-9);
            prev = now;
        }
    }

}

#[test]
fn battery_crossing_arithmetic() {
    let mut w = world(3, 20.4, 0.5);
    let r = w.tick(&[]);
    let b = w.uavs.values().next().unwrap().battery;
    assert!((b - 19.9).abs() < 1e-9);
    assert_eq!(r.signals.len(), 1);
    assert!(w.tick(&[]).signals.is_empty());
}

#[test]
fn logs_are_monotone() {
    for name in hotl_core::FIXTURES {
        let f = fixture(name).unwrap();
        let log = run_headless(load_scenario(f.scenario).unwrap(), Vec::new(), None).unwrap();
        let evs = log.events();
        assert!(evs.windows(2).all(|w| w[0].seq < w[1].seq && w[0].tick <= w[1].tick), "{name}");
        assert!(evs.iter().all(|e| e.kind != EventKind::Error), "{name} logged an error");
    }
}

// Each case runs a full scenario twice.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_seed_same_log(seed in any::<u64>()) {
        let f = fixture("s2_strainers").unwrap();
        let mut spec = load_scenario(f.scenario).unwrap();
        spec.seed = seed;
        spec.sensor.false_positive_rate = 0.05;
        let a = run_headless(spec.clone(), Vec::new(), Some(60)).unwrap().to_jsonl();
        let b = run_headless(spec, Vec::new(), Some(60)).unwrap().to_jsonl();
        prop_assert_eq!(a, b);
    }
}
