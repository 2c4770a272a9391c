//! Certified over-approximation of agent-network fluid models with
//! time-varying uncertain parameters.
//!
//! The pipeline: compile a model into an agent network, integrate its
//! nominal fluid solution, wrap the atomic transition rates in an
//! affine-in-uncertainty envelope, compute extremal deviations with a
//! bang-bang maximum-principle solver, and iterate the deviation map to a
//! certified fixed point that yields a reach tube around the nominal run.

pub mod envelope;
pub mod error;
pub mod expr;
pub mod models;
pub mod network;
pub mod ode;
pub mod pontryagin;
pub mod reach;

pub use error::{Error, Result};
