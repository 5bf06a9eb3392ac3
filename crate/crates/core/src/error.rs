//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Eigensolver failed to reach the residual contract.
    #[error("eigensolver did not converge: residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.3e})")]
    SolverNoConvergence {
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    /// Ground state came back with a non-positive node; signals solver failure.
    #[error("eigenfunction not strictly positive: min {min_value:.6e} at node {node}")]
    NonPositiveEigenfunction { min_value: f64, node: usize },

    /// A trial field with zero (or non-finite) weighted L² norm.
    #[error("field has zero norm in the metric measure")]
    ZeroField,

    /// Explicit time step exceeds the diffusion stability bound.
    #[error("time step {dt:.6e} violates stability bound {bound:.6e} at t = {t:.6}")]
    StabilityViolation { dt: f64, bound: f64, t: f64 },

    /// Solution left the admissible range (overflow guard or r² ≤ 0).
    #[error("blow-up at t = {t:.6}: {reason}")]
    BlowUp { reason: String, t: f64 },

    /// The rescale-map denominator 1 - (2/n)∫s dt reached zero.
    #[error("rescale map domain exhausted at t = {t:.6} (denominator {denominator:.3e})")]
    DomainExhausted { t: f64, denominator: f64 },

    /// Two algebraically equal functional forms disagreed beyond tolerance;
    /// signals an operator inconsistency.
    #[error("functional forms disagree: {form_a:.12e} vs {form_b:.12e} (tolerance {tolerance:.3e})")]
    FormMismatch {
        form_a: f64,
        form_b: f64,
        tolerance: f64,
    },

    /// A runtime invariant (e.g. discrete Gauss–Bonnet) failed during a run.
    #[error("invariant violated: {what} = {value:.6e} exceeds {bound:.6e}")]
    InvariantViolation {
        what: String,
        value: f64,
        bound: f64,
    },

    /// Precondition violation on an operation argument.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Fields or metrics defined on incompatible grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}
