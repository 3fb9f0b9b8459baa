//! Numerical toolkit for time-fractional parabolic equations
//!
//! ```text
//! -∂_t^α u + a^{ij} D_{ij} u + b^i D_i u + c u = f,   α ∈ (0, 1),
//! ```
//!
//! with leading coefficients that may be merely measurable in time.
//!
//! The crate is organised bottom-up:
//!
//! - [`fraccore`]: Riemann–Liouville integrals, Caputo and Riemann–Liouville
//!   derivatives on uniform time grids (L1 / product integration), their
//!   inversion, and a sum-of-exponentials history compressor.
//! - [`grids`]: periodic space-time lattices, finite differences, L_p / mixed /
//!   Hölder norms and parabolic-cylinder geometry.
//! - [`coeffs`]: coefficient fields (rough in time, small-BMO in space), mean
//!   oscillation, mollification and the time-cutoff commutator.
//! - [`solver`]: implicit L1 time stepping, zero extension, energy and local
//!   estimate checks.
//! - [`estimates`]: composite Sobolev norms, a priori constant estimation, the
//!   embedding-inequality verifiers and the exponent ladder.
//! - [`levelset`]: parabolic maximal functions, level-set measures, layer-cake
//!   identity, the `w + v` decomposition, level-set inequalities and the
//!   covering ("ink spots") verifier.
//!
//! Every constant the underlying estimates leave unspecified is *fitted* on a
//! finite lattice; lattice suprema are lower bounds of the continuum ones.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` deliberately rejects NaN

pub mod coeffs;
pub mod error;
pub mod estimates;
pub mod fraccore;
pub mod grids;
pub mod io;
pub mod levelset;
pub mod linalg;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use fraccore::{FracOrder, KernelWeights, TimeSeries};
pub use grids::{GridFunction, ParabolicCylinder, SpaceGrid, TimeGrid};
