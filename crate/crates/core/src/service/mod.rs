//! Mission lifecycle: the tick engine, coordination protocols, log replay and
//! verification.

mod mission;
mod protocols;
mod replay;

pub use mission::{
    parse_transcript, run_headless, run_mission, transcript_to_jsonl, Mission, MissionError, MissionStatus, Origin,
};
pub use protocols::COORDINATOR;
pub(crate) use protocols::EngineRequest;
pub use replay::{replay, verify, GoalView, MissionSnapshot, Replay, ReplayError, RequestView, Verification, VerifyError};
