//! Numerical laboratory for one-dimensional nonconservative Maxwell-type
//! kinetic models.
//!
//! Particles carry a scalar state (a velocity on the real line, or a wealth on
//! the half line) and interact in pairs through the linear rule
//! `v* = p v + q w`, `w* = q v + p w`. The crate provides
//!
//! * [`analysis`]: closed-form moment laws, the tail functions `S(δ)` and
//!   `R(δ)`, their positive roots (the algebraic tail exponent) and the
//!   `(p, q)` negativity-region scan;
//! * [`equilibria`]: the closed-form Fokker–Planck stationary densities with
//!   quadrature-backed moments and exact samplers;
//! * [`simulator`]: the particle Monte Carlo with time-counter stepping,
//!   self-similar renormalization and snapshot-averaged histograms;
//! * [`metrics`]: Fourier-metric distances between empirical laws, histogram
//!   distances, tail-exponent fits and exponential-rate extraction;
//! * [`cli`]: the `kinlab` command-line front end.

// Negated float comparisons reject NaN; reference constants keep all their digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod analysis;
pub mod cli;
pub mod equilibria;
pub mod error;
pub mod metrics;
pub mod output;
pub mod params;
pub mod quadrature;
pub mod simulator;

pub use error::{Error, Result};
pub use params::{CollisionParams, ModelKind, Regime};

/// Version string recorded in manifests and CSV metadata headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
