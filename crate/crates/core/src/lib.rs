//! Forward models and parameter estimation for dispersive, interferometric
//! probing of atoms held in a far-off-resonant optical dipole trap.
//!
//! The crate is organised bottom-up:
//!
//! * [`atomic_physics`] holds line data and the atom–light response
//!   (phase shift, absorption, trap depth).
//! * [`interferometer`] simulates balanced-homodyne pulse trains and their noise.
//! * [`trap_dynamics`] evolves atom number and cloud geometry in time.
//! * [`estimation`] recovers model parameters by Levenberg–Marquardt fits.
//! * [`harness`] wires the above into reproducible end-to-end scenarios.
//!
//! All quantities are SI internally; frequencies are angular (rad/s) unless a
//! name or doc comment says Hz.

pub mod angular;
pub mod atomic_physics;
pub mod constants;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod interferometer;
pub mod ode;
pub mod trap_dynamics;

pub use error::{Error, Result};
