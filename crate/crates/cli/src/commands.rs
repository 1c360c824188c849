//! Headless subcommands: run, replay, verify.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hotl_core::service::{parse_transcript, run_mission};
use hotl_core::{fixture, load_scenario, replay, verify, HumanInteraction, ScenarioSpec, Tick};

/// A scenario named on the command line: a file path or a shipped fixture name.
pub struct ScenarioSource {
    pub spec: ScenarioSpec,
    /// Transcript shipped alongside a fixture, if any.
    pub bundled_transcript: Option<Vec<HumanInteraction>>,
}

pub fn load_source(arg: &str) -> Result<ScenarioSource> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        let spec = load_scenario(&text).with_context(|| format!("loading {arg}"))?;
        let sibling = path.with_extension("transcript.jsonl");
        let bundled_transcript = match fs::read_to_string(&sibling) {
            Ok(t) => Some(parse_transcript(&t).with_context(|| format!("parsing {}", sibling.display()))?),
            Err(_) => None,
        };
        return Ok(ScenarioSource { spec, bundled_transcript });
    }
    let Some(f) = fixture(arg) else {
        bail!("`{arg}` is neither a file nor a shipped scenario ({})", hotl_core::FIXTURES.join(", "));
    };
    Ok(ScenarioSource {
        spec: load_scenario(f.scenario).with_context(|| format!("loading fixture {arg}"))?,
        bundled_transcript: Some(parse_transcript(f.transcript)?),
    })
}

pub struct RunOutcome {
    pub log: String,
    pub events: usize,
    pub ticks: Tick,
    pub decisions: usize,
}

/// Runs a scenario headless. An explicit transcript replaces the bundled one;
/// `no_transcript` runs without operator input.
pub fn run(scenario: &str, transcript: Option<&Path>, no_transcript: bool, max_ticks: Option<Tick>) -> Result<RunOutcome> {
    let src = load_source(scenario)?;
    let interactions = match (transcript, no_transcript) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_transcript(&text)?
        }
        (None, true) => Vec::new(),
        (None, false) => src.bundled_transcript.unwrap_or_default(),
    };
    let m = run_mission(src.spec, interactions, max_ticks)?;
    Ok(RunOutcome {
        log: m.log().to_jsonl(),
        events: m.log().len(),
        ticks: m.next_tick(),
        decisions: m.decisions().count(),
    })
}

/// Folds a log and returns the final snapshot in canonical form.
pub fn replay_log(log: &Path) -> Result<String> {
    let text = fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
    let r = replay(&text)?;
    Ok(r.final_snapshot().to_canonical())
}

/// Re-runs `scenario` against the operator transcript recorded in `log`.
pub fn verify_log(scenario: &str, log: &Path, max_ticks: Option<Tick>) -> Result<hotl_core::service::Verification> {
    let src = load_source(scenario)?;
    let text = fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
    Ok(verify(src.spec, &text, max_ticks)?)
}
