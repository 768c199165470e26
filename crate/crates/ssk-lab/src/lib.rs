//! Numerical laboratory for the free energy and overlaps of the 2-spin
//! spherical Sherrington–Kirkpatrick model at vanishing external field.
//!
//! The crate is layered bottom-up:
//! - [`linalg`], [`quad`], [`rng`]: eigensolvers, Gauss–Kronrod quadrature,
//!   reproducible random streams;
//! - [`semicircle`], [`special`]: semicircle-law functions, Bessel functions,
//!   reference distributions, KS statistics, linear-statistic constants;
//! - [`model`]: disorder ensembles and spectral samples;
//! - [`saddle`]: the saddle-point exponents and their root solvers;
//! - [`contour`]: exact contour-integral evaluators (partition function,
//!   overlap moments, replica Laplace transform);
//! - [`regimes`], [`airy`]: asymptotic predictions in the Gaussian,
//!   intermediate and microscopic regimes;
//! - [`experiments`]: Monte Carlo harness, sphere oracle, persistence.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.  Index
// loops mirror the matrix formulas they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod airy;
pub mod contour;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod quad;
pub mod regimes;
pub mod rng;
pub mod saddle;
pub mod semicircle;
pub mod special;

pub use error::{Error, Result};
