//! Shipped scenarios with their operator transcripts.

#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub scenario: &'static str,
    /// JSONL, one interaction per line.
    pub transcript: &'static str,
}

pub const FIXTURES: [&str; 6] =
    ["s1_rescue_strategy", "s2_strainers", "s3_confirmation", "s4_dedup", "s5_rtl_override", "f1_fire_mapping"];

macro_rules! fixture {
    ($name:literal) => {
        Fixture {
            name: $name,
            scenario: include_str!(concat!("../../scenarios/", $name, ".json")),
            transcript: include_str!(concat!("../../scenarios/", $name, ".transcript.jsonl")),
        }
    };
}

pub fn fixture(name: &str) -> Option<Fixture> {
    Some(match name {
        "s1_rescue_strategy" => fixture!("s1_rescue_strategy"),
        "s2_strainers" => fixture!("s2_strainers"),
        "s3_confirmation" => fixture!("s3_confirmation"),
        "s4_dedup" => fixture!("s4_dedup"),
        "s5_rtl_override" => fixture!("s5_rtl_override"),
        "f1_fire_mapping" => fixture!("f1_fire_mapping"),
        _ => return None,
    })
}
