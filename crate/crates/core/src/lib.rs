//! Adaptive internal-model attitude tracking for flexible spacecraft with
//! uncertain inertia and unknown disturbance frequencies.
//!
//! The crate is layered bottom-up: [`quat`] and [`plant`] model the
//! spacecraft, [`exosystem`] and [`internal_model`] synthesize the
//! disturbance-rejecting internal model, [`controller`] evaluates the
//! adaptive control law, [`sim`] integrates the closed loop and
//! [`analysis`] checks Lyapunov and persistent-excitation properties.

pub mod analysis;
pub mod controller;
pub mod error;
pub mod exosystem;
pub mod internal_model;
pub mod linalg;
pub mod plant;
pub mod quat;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
