use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hotl_bench::{detections, low_battery_agent, scenario};
use hotl_core::bdi::{applicable_plans, select_plan, PriorityThenOrder};
use hotl_core::coordination::deduplicate_detections;
use hotl_core::{replay, run_headless};
use std::hint::black_box;

fn dispatch(c: &mut Criterion) {
    let (agent, ev) = low_battery_agent();
    c.bench_function("dispatch/low_battery", |b| {
        b.iter(|| {
            let candidates = applicable_plans(&agent.library, black_box(&ev), &agent.kb, &agent.role);
            select_plan(&candidates, &PriorityThenOrder, &agent.kb).map(|p| p.id.clone())
        })
    });
}

fn dedup(c: &mut Criterion) {
    let mut g = c.benchmark_group("dedup");
    for n in [16, 128] {
        let ds = detections(n);
        g.bench_function(n.to_string(), |b| b.iter(|| deduplicate_detections(black_box(&ds), 10.0, 30.0)));
    }
    g.finish();
}

fn missions(c: &mut Criterion) {
    let mut g = c.benchmark_group("mission");
    g.sample_size(10);
    for name in ["s5_rtl_override", "s4_dedup"] {
        let (spec, transcript) = scenario(name);
        g.bench_function(format!("run/{name}"), |b| {
            b.iter_batched(|| (spec.clone(), transcript.clone()), |(s, t)| run_headless(s, t, None), BatchSize::SmallInput)
        });
        let log = run_headless(spec.clone(), transcript.clone(), None).expect("runs").to_jsonl();
        g.bench_function(format!("replay/{name}"), |b| b.iter(|| replay(black_box(&log)).map(|r| r.events().len())));
    }
    g.finish();
}

criterion_group!(benches, dispatch, dedup, missions);
criterion_main!(benches);
