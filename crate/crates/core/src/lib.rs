//! Correlation-function dynamics of a two-type continuum contact process in
//! which the (−)-system evolves autonomously and seeds births in the
//! (+)-system.
//!
//! The crate provides closed-form Fourier solutions for the first- and
//! second-order correlation functions, ODE oracles for the same hierarchy,
//! long-time limits, and an exact event-driven simulator on a torus.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod evolution1;
pub mod evolution2;
pub mod model;
mod ode;
pub mod quadrature;
pub mod simulator;
pub mod spectral;
