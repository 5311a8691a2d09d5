//! Multi-UAV mission simulation and control under GPS spoofing.
//!
//! The crate is organised in two levels. The coordination level
//! ([`coordination`], [`trajectory`]) moves each agent's virtual target along
//! a Bézier path while keeping the agents' progress in consensus. The
//! safety-critical level ([`estimation`], [`detection`], [`safety`],
//! [`localization`]) estimates the state with and without GPS, flags spoofing
//! with a χ² CUSUM test, and drives an attacked agent out of the spoofer's
//! effective range before its IMU-only estimate becomes untrustworthy.
//!
//! [`scenario`] ties everything together into a deterministic, seeded
//! simulator with a tabular trace output.

pub mod coordination;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod localization;
pub mod noise;
pub mod safety;
pub mod scenario;
pub mod trajectory;

pub use error::{Error, Result};
