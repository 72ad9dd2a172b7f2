//! Robust nonlinear quadratic Gaussian (RNQG) control synthesis via
//! state-dependent Riccati equations.
//!
//! The crate is organised bottom-up:
//!
//! - [`riccati`]: continuous algebraic Riccati solvers with certified residuals.
//! - [`sdc`]: state-dependent-coefficient plants, noise specifications and cost weights.
//! - [`synthesis`]: block assembly and SDRE / H2-H∞ / RNQG gains at a state.
//! - [`value_approx`]: least-squares polynomial value functions and the fast
//!   approximate controller.
//! - [`pendulum`]: the flywheel inverted pendulum benchmark.
//! - [`simulate`]: fixed-step closed-loop simulation, noise streams and metrics.

pub mod linalg;
pub mod pendulum;
pub mod riccati;
pub mod sdc;
pub mod simulate;
pub mod synthesis;
pub mod value_approx;

pub use nalgebra::{DMatrix, DVector};
