//! Energy-optimal resource allocation for multiuser mobile-edge computation
//! offloading over TDMA and OFDMA uplinks.
//!
//! The TDMA solvers compute threshold policies: every user gets an offloading
//! priority, and users above a common threshold offload everything while users
//! below it offload only what their local CPU cannot finish in time. The OFDMA
//! solver reduces the sub-channel problem to a TDMA-like one over average gains
//! and then rounds it to an integer assignment.
//!
//! Module map:
//! - [`numerics`]: Lambert W, the transmit-energy function and its inverses, bisection.
//! - [`model`]: users, system configuration, allocations, energy accounting.
//! - [`priority`]: offloading priority functions.
//! - [`tdma`]: optimal and sub-optimal TDMA policies plus the equal-time baseline.
//! - [`ofdma`]: the four-phase OFDMA heuristic and the greedy baseline.
//! - [`oracle`]: brute-force reference solvers for testing.
//! - [`sim`]: scenario generation, Monte-Carlo runs and parameter sweeps.

pub mod error;
pub mod model;
pub mod numerics;
pub mod ofdma;
pub mod oracle;
pub mod priority;
pub mod sim;
pub mod tdma;

pub use error::{Error, Result};
pub use model::{
    CloudModel, Feasibility, OfdmaAllocation, PolicyReport, Scenario, SystemConfig, TdmaAllocation,
    UserProfile,
};
