//! Scenario files shipped with the binary.

pub const SCENARIOS: &[(&str, &str)] = &[
    ("chain_sweep", include_str!("../scenarios/chain_sweep.scn")),
    ("happy_onboard", include_str!("../scenarios/happy_onboard.scn")),
    ("registry_gate", include_str!("../scenarios/registry_gate.scn")),
    ("pake_mitm", include_str!("../scenarios/pake_mitm.scn")),
    ("prior_boarding", include_str!("../scenarios/prior_boarding.scn")),
    ("mediated_update", include_str!("../scenarios/mediated_update.scn")),
    ("ap_isolation", include_str!("../scenarios/ap_isolation.scn")),
    ("transfer", include_str!("../scenarios/transfer.scn")),
    ("rotation", include_str!("../scenarios/rotation.scn")),
    ("rotation_interrupted", include_str!("../scenarios/rotation_interrupted.scn")),
    ("remote_threats", include_str!("../scenarios/remote_threats.scn")),
];

pub fn get(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
