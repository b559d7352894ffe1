//! Numerical toolkit for SDEs driven by weighted cylindrical fractional
//! Brownian motion with singular drift.
//!
//! The pieces, bottom up:
//!
//! * [`fbm`]: scalar fBm covariance, Volterra kernel, samplers, conditioning;
//! * [`fraccalc`]: Riemann–Liouville integrals and derivatives on grids and the
//!   operator pair `K_H`, `K_H^{-1}`;
//! * [`cyl`]: Hurst and weight sequences and truncated cylindrical ensembles;
//! * [`drift`]: drift classes, the exponential half-space family, truncation
//!   and mollification;
//! * [`girsanov`]: stochastic exponentials and the reweighted weak estimator;
//! * [`solver`]: Picard solver, Malliavin derivatives, convergence experiment;
//! * [`verify`]: numerical checks of the combinatorial and Gaussian lemmas.
//!
//! Monte Carlo work runs on rayon when the `parallel` feature is enabled and
//! sequentially otherwise; results are bitwise identical either way.

pub mod cyl;
pub mod drift;
pub mod error;
pub mod fbm;
pub mod fraccalc;
pub mod girsanov;
pub mod grid;
pub mod par;
pub mod quad;
pub mod rng;
pub mod solver;
pub mod special;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{GridFunction, TimeGrid};
