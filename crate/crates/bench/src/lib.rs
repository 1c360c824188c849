//! Inputs for the engine benchmarks.

use hotl_core::bdi::BdiEvent;
use hotl_core::coordination::Detection;
use hotl_core::service::parse_transcript;
use hotl_core::{fixture, load_scenario, AgentId, AgentState, HumanInteraction, Mission, Position, ScenarioSpec};

pub fn scenario(name: &str) -> (ScenarioSpec, Vec<HumanInteraction>) {
    let f = fixture(name).unwrap_or_else(|| panic!("no fixture `{name}`"));
    let spec = load_scenario(f.scenario).expect("shipped scenario loads");
    (spec, parse_transcript(f.transcript).expect("shipped transcript parses"))
}

/// The S5 tracker just after its battery crosses the threshold, paired with
/// the low_battery event it is about to handle.
pub fn low_battery_agent() -> (AgentState, BdiEvent) {
    let (spec, _) = scenario("s5_rtl_override");
    let mut m = Mission::new(spec).expect("valid scenario");
    let id = "UAV-1".into();
    while m.agent(&id).and_then(|a| a.kb.value("self.low_battery")).is_none() {
        assert!(m.step(), "battery never crossed");
    }
    let agent = m.agent(&id).expect("agent exists").clone();
    let ev = BdiEvent::signal("low_battery", m.next_tick(), &id);
    (agent, ev)
}

/// `n` detections in clusters of four around a diagonal, with a few stragglers.
pub fn detections(n: usize) -> Vec<Detection> {
    (0..n)
        .map(|i| {
            let cluster = (i / 4) as f64;
            let jitter = (i % 4) as f64 * 3.0;
            Detection {
                id: format!("d{i}"),
                agent: AgentId::new(format!("UAV-{}", i % 5)),
                position: Position::new(cluster * 60.0 + jitter, cluster * 45.0 - jitter),
                confidence: 0.5 + (i % 7) as f64 * 0.05,
                position_error: if i % 11 == 0 { 45.0 } else { 4.0 },
                tick: 0,
                victim: format!("v{}", i / 4),
            }
        })
        .collect()
}
