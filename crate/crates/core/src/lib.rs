//! Incomplete Radner equilibria for heterogeneous exponential investors.
//!
//! The factor process is a driftless Gaussian process `Y_t = ∫ C(u) dW_u`
//! (after [`model::reduce_coordinates`]). Two solvers produce an
//! [`Equilibrium`]:
//!
//! * [`picard::picard_solve`] iterates the Feynman–Kac contraction map on a
//!   gridded value-function tuple for general endowments;
//! * [`riccati::riccati_integrate`] integrates the coupled Riccati system for
//!   exponential-quadratic endowments.
//!
//! [`taylor`] compares the two and fits the convergence exponent, and [`mc`]
//! checks martingality, clearing and local optimality by simulation.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. `std` enables rayon parallelism and the platform math library.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod kernel;
pub mod lemma;
pub mod linalg;
pub(crate) mod math;
pub mod mc;
pub mod model;
pub mod picard;
pub mod quadrature;
pub mod riccati;
pub mod taylor;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{EndowmentKind, EndowmentSpec, MarketConfig, VolSchedule};
pub use picard::{Equilibrium, Provenance, SolutionField};
pub use riccati::RiccatiPath;

/// Ordered parallel map over `0..n`; sequential without `std`.
#[cfg(feature = "std")]
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> alloc::vec::Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "std"))]
pub(crate) fn par_map<T, F: Fn(usize) -> T>(n: usize, f: F) -> alloc::vec::Vec<T> {
    (0..n).map(f).collect()
}
