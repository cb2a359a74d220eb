//! Bundled test networks.

use crate::network::{import_matpower_case, parse_network, Network};

const TWO_BUS: &str = r#"{
  "buses": [
    {"id": 1, "role": "slack"},
    {"id": 2, "role": "load"}
  ],
  "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 1.0}]
}"#;

pub const SIX_BUS_JSON: &str = include_str!("../fixtures/six_bus.json");
pub const FEEDER33_M: &str = include_str!("../fixtures/feeder33.m");

/// Slack plus one load bus behind a lossless line with `x = 1`.
pub fn two_bus() -> Network {
    parse_network(TWO_BUS).expect("two-bus fixture")
}

/// Six-bus line feeder `1–2–3–4–5–6`, slack at bus 1, every other bus loaded.
pub fn six_bus() -> Network {
    parse_network(SIX_BUS_JSON).expect("six-bus fixture")
}

/// Synthetic 33-bus radial feeder.
pub fn feeder33() -> Network {
    import_matpower_case(FEEDER33_M).expect("33-bus fixture")
}
