//! Simulation and security analysis for four-intensity decoy-state
//! measurement-device-independent QKD with time-bin phase encoding.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: channel/detector/protocol parameters and closed-form expected
//!   gains for every source pair.
//! - [`simkit`]: pulse-level Monte Carlo of the two-laser interference and
//!   Bell-state measurement, a synthetic-yield generator, and the two-photon
//!   interference computation of the single-photon-pair yield.
//! - [`stats`]: concentration bounds on Bernoulli means and counts.
//! - [`lp`]: linear programs over photon-number-resolved yields.
//! - [`decoy`]: finite-size bounds on the single-photon-pair yield and error
//!   rate via linear programming, and the resulting key rates.
//! - [`optimize`]: multi-start Nelder–Mead search over the protocol
//!   parameters.
//! - [`baseline`]: passive BB84 reference curves under the linear loss model.

pub mod baseline;
pub mod decoy;
mod error;
pub mod lp;
pub mod model;
pub mod optimize;
pub mod simkit;
pub mod stats;

pub use error::{Error, Result};
