//! Quantal-response mean-field equilibria of heterogeneous-agent economies.
//!
//! The solver alternates between a firm that prices capital and labor from
//! population aggregates, and a household problem solved offline by fitted
//! Q-iteration whose regression step is restricted to concave functions
//! (fitted as max-affine convex functions of `B - Q`). Households act through
//! entropy-regularized Gibbs policies.
//!
//! Module map:
//!
//! - [`shape_reg`]: max-affine least squares and the ICNN conversion.
//! - [`mdp`]: states, feasible intervals, datasets, concave Q-functions and
//!   sampled Bellman targets.
//! - [`cfqi`]: concave fitted Q-iteration.
//! - [`policy`]: Gibbs policies on feasible action intervals.
//! - [`economy`]: the Aiyagari household/firm environment.
//! - [`equilibrium`]: the outer mean-field loop and a model-based reference
//!   solver.
//! - [`experiment`]: sample-size sweeps, rate fits, CSV and SVG output.

pub mod cfqi;
pub mod economy;
pub mod equilibrium;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod policy;
pub mod seeds;
pub mod shape_reg;

pub use error::{Error, Result};
