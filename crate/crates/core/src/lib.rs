//! Frequency dynamics of multi-machine power systems.
//!
//! The crate covers the full chain from static network data to an analytic
//! prediction of the post-disturbance frequency nadir:
//!
//! - [`grid`] — case files, admittance matrix, Newton-Raphson power flow,
//!   disturbance scenarios.
//! - [`machine`] — the differential-algebraic model (two-axis synchronous
//!   machines, IEEE Type-1 exciters, IEESGO-style turbine/governors) and its
//!   steady-state initialization.
//! - [`simulator`] — implicit-trapezoidal time-domain integration, the
//!   ground truth for frequency response and nadir.
//! - [`linear`] — post-disturbance equilibrium, finite-difference Jacobians,
//!   and the Kron-reduced state matrix.
//! - [`modal`] — eigendecomposition with biorthonormal left/right
//!   eigenvectors, participation factors, and slow-mode selection.
//! - [`nadir`] — the center-of-inertia response assembled from a handful of
//!   slow modes, and the closed-form nadir time/magnitude estimate.
//! - [`study`] — end-to-end pipelines shared by the CLI and the test suite.
//!
//! All network quantities are per-unit on the system MVA base; inertia
//! constants are seconds and frequencies Hz at the reporting boundary.
//! Internally the estimator works in per-unit speed deviation throughout.

pub mod error;
pub mod grid;
pub mod linear;
pub mod machine;
pub mod modal;
pub mod nadir;
pub mod simulator;
pub mod study;

pub use error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type DMat = nalgebra::DMatrix<f64>;
/// Dense real vector.
pub type DVec = nalgebra::DVector<f64>;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<num_complex::Complex64>;
/// Dense complex vector.
pub type CVec = nalgebra::DVector<num_complex::Complex64>;
/// Complex scalar.
pub type C64 = num_complex::Complex64;
