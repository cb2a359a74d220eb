//! Synchronization-aware state estimation for AC power networks from sparse,
//! imperfectly synchronized PMU measurements and demand pseudo-measurements.
//!
//! The pipeline is: parse a [`network::Network`], solve the AC power flow for
//! a nominal [`powerflow::OperatingPoint`], linearize it into a
//! [`linearize::LinearModel`], then run the Kalman estimator in
//! [`estimator`] on simulated ([`measure`]) or recorded PMU frames.
//! [`analysis`] holds the two-node closed-form oracle, error metrics, greedy
//! PMU placement and the Monte-Carlo experiment harness.

pub mod analysis;
pub mod estimator;
pub mod fixtures;
pub mod linalg;
pub mod linearize;
pub mod measure;
pub mod network;
pub mod powerflow;
pub mod rng;

pub use linearize::{tangent_matrix, LinearModel};
pub use measure::{ClockError, MeasurementConfig, Placement, PmuFrame};
pub use network::{build_admittance, import_matpower_case, parse_network, Network};
pub use powerflow::{solve_power_flow, GridState, OperatingPoint};
