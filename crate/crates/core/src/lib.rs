//! Steady-state superradiance of `N` two-level atoms with collective
//! cavity-mediated decay and incoherent single-atom repumping.
//!
//! The crate provides three independent routes to the steady state of the
//! master equation: Monte Carlo wavefunction trajectories ([`mcwf`]), the
//! exact Liouvillian null space for small `N` ([`oracle`]), and the
//! pair-correlation cumulant theory with its large-`N` closed forms
//! ([`cumulant`]). [`analysis`] turns states into emission rates and
//! `(J, M)` subspace tables, and [`sweep`] drives parameter sweeps that
//! write figure-ready CSV tables.

pub mod analysis;
pub mod cumulant;
pub mod error;
pub mod hilbert;
pub mod mcwf;
pub mod ode;
pub mod oracle;
pub mod output;
pub mod params;
pub mod sweep;

pub use error::{Error, Result};
pub use hilbert::{HalfInt, JMSubspace, JmDecomposition, SparseOperator, StateVector};
pub use params::{ModelParams, Regime};

/// Crate version embedded in output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
