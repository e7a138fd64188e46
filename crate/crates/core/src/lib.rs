//! Simulator and optimization library for a wirelessly powered cell-free IoT
//! network: closed-form asymptotic expressions for channel-estimate quality,
//! harvested energy and achievable rate (validated against finite-pilot
//! Monte Carlo), plus a long-term drift-plus-penalty scheduler with downlink
//! SCP and uplink fractional-programming power control, benchmarked against a
//! greedy baseline.

pub mod airlink;
pub mod config;
pub mod detequiv;
pub mod error;
pub mod ledger;
pub mod linalg;
pub mod netmodel;
pub mod rng;
pub mod simctl;
pub mod solvers;

pub use config::SystemConfig;
pub use error::{Error, Result};

/// Transmission mode of one slot: either the APs beamform energy to the
/// active sensors (harvest) or the active sensors send data (transmit).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotMode {
    Harvest,
    Transmit,
}

impl SlotMode {
    /// Mode indicator as used in the closed forms (1 on harvest slots).
    pub fn delta(self) -> f64 {
        match self {
            SlotMode::Harvest => 1.0,
            SlotMode::Transmit => 0.0,
        }
    }
}
