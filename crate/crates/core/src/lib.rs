//! Numerical laboratory for Ricci flow on compact surfaces.
//!
//! The crate evolves two concrete metric families — conformal metrics
//! `g = e^{2u} (dx² + dy²)` on a flat torus, and round spheres of any
//! dimension — under Ricci flow and its rescaled/normalized variants,
//! computes the lowest eigenvalue of the Schrödinger-type operator
//! `-4Δ + kR` along the flow, and checks the monotonicity formulas and
//! first-variation identities that connect the two by direct numerical
//! experiment.
//!
//! Module map:
//!
//! * [`grid`] — periodic grids and Fourier derivative operators;
//! * [`geometry`] — metrics, curvature, measure, and differential operators;
//! * [`spectral`] — lowest eigenpair of `-4Δ + kR` and derived invariants;
//! * [`flow`] — RK4 time stepping for the metric and the conjugate weight
//!   equation;
//! * [`rescale`] — the scale factor `φ(t)`, reparameterized time, and the
//!   Ricci ↔ rescaled-Ricci correspondence;
//! * [`functionals`] — `F_k`, `W_k`, identity right-hand sides, and the
//!   monitored series M1–M4;
//! * [`harness`] — verification experiments producing machine-readable
//!   reports.

pub mod error;
pub mod flow;
pub mod functionals;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod rescale;
pub mod rng;
pub mod spectral;
pub mod sum;

pub use error::{Error, Result};
