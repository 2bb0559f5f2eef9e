//! Simulation and analysis library for a magnetically coupled
//! anti-biofouling wiper on an underwater optical sensor.
//!
//! - [`mechanism`]: lead-screw and scotch-yoke kinematics, pass timing and
//!   energy, magnetic coupling break-away.
//! - [`relay`]: latching-relay / limit-switch state machine and pass runner.
//! - [`fouling`]: biofilm growth on the observation window and wiping.
//! - [`imaging`]: frame rendering, adaptive binarization, MSE.
//! - [`pnm`]: PGM/PPM reading and writing.
//! - [`experiment`]: control vs treated protocol, reports, calibration.
//! - [`policy`]: image-triggered autonomous cleaning.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrated;
pub mod error;
pub mod experiment;
pub mod fouling;
pub mod imaging;
pub mod mechanism;
pub mod pnm;
pub mod policy;
pub mod relay;
pub mod seeds;

pub use error::{Error, Result};
