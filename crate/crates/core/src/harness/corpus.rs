//! Scenarios bundled with the binary.

use crate::harness::scenario::{Scenario, ScenarioError};

pub const FILES: &[(&str, &str)] = &[
    ("adv-crash.toml", include_str!("../../scenarios/adv-crash.toml")),
    ("adv-equivocate-r1.toml", include_str!("../../scenarios/adv-equivocate-r1.toml")),
    ("adv-equivocate-r2.toml", include_str!("../../scenarios/adv-equivocate-r2.toml")),
    ("adv-frame-attempt.toml", include_str!("../../scenarios/adv-frame-attempt.toml")),
    ("adv-lie-non-delivery.toml", include_str!("../../scenarios/adv-lie-non-delivery.toml")),
    ("adv-omit-status.toml", include_str!("../../scenarios/adv-omit-status.toml")),
    ("adv-relay-withhold.toml", include_str!("../../scenarios/adv-relay-withhold.toml")),
    ("adv-withhold.toml", include_str!("../../scenarios/adv-withhold.toml")),
    ("alert-3-relays.toml", include_str!("../../scenarios/alert-3-relays.toml")),
    ("alert-byzantine-relay.toml", include_str!("../../scenarios/alert-byzantine-relay.toml")),
    ("normal-1-relay.toml", include_str!("../../scenarios/normal-1-relay.toml")),
    ("normal-direct.toml", include_str!("../../scenarios/normal-direct.toml")),
    ("qos-all-fast.toml", include_str!("../../scenarios/qos-all-fast.toml")),
    ("qos-request-during-reconfig.toml", include_str!("../../scenarios/qos-request-during-reconfig.toml")),
    ("qos-request.toml", include_str!("../../scenarios/qos-request.toml")),
    ("qos-slow-unadjusted.toml", include_str!("../../scenarios/qos-slow-unadjusted.toml")),
    ("qos-slow.toml", include_str!("../../scenarios/qos-slow.toml")),
];

pub fn load_all() -> Result<Vec<Scenario>, ScenarioError> {
    FILES.iter().map(|(name, text)| Scenario::from_toml(text, name)).collect()
}

pub fn get(name: &str) -> Option<Scenario> {
    FILES
        .iter()
        .find(|(file, _)| file.trim_end_matches(".toml") == name)
        .map(|(file, text)| Scenario::from_toml(text, file).expect("bundled scenario parses"))
}
