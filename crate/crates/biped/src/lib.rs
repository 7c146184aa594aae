//! Simulation and control toolkit for underactuated point-foot planar bipeds.
//!
//! The crate designs impact-free, energy-conserving walking gaits for an
//! n-link chain (n odd) via virtual holonomic constraints, reduces the
//! constrained motion to a conservative one-degree-of-freedom zero dynamics,
//! and stabilizes the resulting periodic orbit with impulsive velocity
//! corrections applied on a Poincaré section (discrete LQR on the
//! linearized section-to-section map).
//!
//! Module layout:
//! - [`params`] / [`state`]: chain parameters and coordinate bookkeeping
//! - [`model`]: swing-phase dynamics, energies, swing-foot kinematics
//! - [`hybrid`]: impulsive velocity jumps, ground impact, leg relabelling
//! - [`vhc`]: constraint family, gait-design residuals, parameter solver
//! - [`zerodyn`]: reduced dynamics, integral of motion, orbit selection
//! - [`control`]: constraint-enforcing feedback and impulse realizations
//! - [`sim`]: adaptive integration of full steps with event localization
//! - [`icpm`]: Poincaré map, linearization, discrete LQR impulse feedback
//! - [`config`]: plain-text run configuration

pub mod angles;
pub mod config;
pub mod control;
pub mod error;
pub mod hybrid;
pub mod icpm;
pub mod model;
pub mod ode;
pub mod params;
pub mod sim;
pub mod state;
pub mod vhc;
pub mod zerodyn;

pub use error::{Error, Result, StepFailure};
pub use params::BipedParams;
pub use state::State;
