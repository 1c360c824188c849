//! The `hotl` binary end to end: run, replay and verify.

use std::fs;
use std::process::{Command, Output};

use hotl_core::FIXTURES;

fn hotl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hotl")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn scenarios_lists_every_fixture() {
    let o = hotl(&["scenarios"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().collect::<Vec<_>>(), FIXTURES.to_vec());
}

#[test]
fn run_then_verify_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s5.jsonl");
    let o = hotl(&["run", "s5_rtl_override", "--out", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = hotl(&["verify", "s5_rtl_override", log.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("identical"));

    let o = hotl(&["replay", log.to_str().unwrap()]);
    assert!(o.status.success());
    let snap: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(snap["beliefs"].get("UAV-1").is_some());
}

#[test]
fn run_to_stdout_matches_run_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s3.jsonl");
    let a = hotl(&["run", "s3_confirmation", "--max-ticks", "30"]);
    hotl(&["run", "s3_confirmation", "--max-ticks", "30", "--out", log.to_str().unwrap()]);
    assert_eq!(stdout(&a), fs::read_to_string(&log).unwrap());
}

#[test]
fn verify_flags_a_log_from_a_different_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s1.jsonl");
    hotl(&["run", "s1_rescue_strategy", "--max-ticks", "30", "--out", log.to_str().unwrap()]);
    let text = fs::read_to_string(&log).unwrap();
    let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
    fs::write(&log, cut).unwrap();
    let o = hotl(&["verify", "s1_rescue_strategy", log.to_str().unwrap(), "--max-ticks", "30"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("differs at line 21"));
}

#[test]
fn scenario_files_pick_up_their_sibling_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let f = hotl_core::fixture("s1_rescue_strategy").unwrap();
    let scenario = dir.path().join("rescue.json");
    fs::write(&scenario, f.scenario).unwrap();
    fs::write(dir.path().join("rescue.transcript.jsonl"), f.transcript).unwrap();

    let from_file = hotl(&["run", scenario.to_str().unwrap(), "--max-ticks", "20"]);
    let from_name = hotl(&["run", "s1_rescue_strategy", "--max-ticks", "20"]);
    let bare = hotl(&["run", scenario.to_str().unwrap(), "--max-ticks", "20", "--no-transcript"]);
    assert_eq!(stdout(&from_file), stdout(&from_name));
    assert_ne!(stdout(&from_file), stdout(&bare));
}

#[test]
fn bad_input_exits_with_code_two() {
    let o = hotl(&["run", "no_such_scenario"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.jsonl");
    fs::write(&junk, "{\"seq\":1}\n").unwrap();
    assert_eq!(hotl(&["replay", junk.to_str().unwrap()]).status.code(), Some(2));
}
