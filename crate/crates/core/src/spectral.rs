//! Lowest eigenpair of the operator `-4Δ_g + kR` and derived invariants.
//!
//! On the conformal torus the discrete problem is the symmetric generalized
//! eigenproblem `A w = λ B w` built from the quadratic form
//! `∫(4|∇w|² + kR w²) dμ` against the mass form `∫w² dμ`. In the flat
//! reduction the stiffness is the flat Dirichlet form, the potential density
//! is `kR e^{2u} = -2k Δ₀u`, and the mass matrix is `diag(e^{2u})`.
//!
//! The solver is a single-vector locally optimal preconditioned scheme
//! (Rayleigh–Ritz over span{x, preconditioned residual, previous direction})
//! with a Fourier-space `(4(-Δ) + γ)⁻¹` preconditioner. The contract — not
//! the algorithm — is normative: the result must satisfy the residual
//! tolerance and match a dense eigensolve of the identical discrete form.

use crate::error::{Error, Result};
use crate::geometry::{ConformalTorus, Metric, ScalarField, TorusFields};
use crate::grid::{GridField, SpectralOps};
use crate::sum::{cdot, cdot3, csum};
use nalgebra::DMatrix;

/// Convergence contract for the iterative eigensolver.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct EigenSolverConfig {
    /// Relative residual tolerance ‖Aw - λBw‖ / (‖Aw‖ + |λ|‖Bw‖).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenSolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 800,
        }
    }
}

impl EigenSolverConfig {
    /// Tight tolerance used where eigenvalues are finite-differenced in time.
    pub fn tight() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 2000,
        }
    }
}

/// Result of a lowest-eigenpair solve.
#[derive(Clone, Debug)]
pub struct SpectralResult {
    /// Lowest eigenvalue of -4Δ + kR.
    pub lambda: f64,
    /// Ground state, strictly positive, normalized to ∫u² dμ = 1.
    pub eigenfunction: ScalarField,
    pub k: f64,
    /// Relative operator residual at return.
    pub residual: f64,
    pub iterations: usize,
}

fn validate_k(k: f64) -> Result<()> {
    if !(k >= 1.0 && k.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "operator parameter k must be a finite real >= 1, got {k}"
        )));
    }
    Ok(())
}

/// Discrete operator data for the torus eigenproblem.
pub(crate) struct TorusOperator {
    pub ops: SpectralOps,
    /// Potential density k·R·e^{2u} (flat measure).
    pub pot: Vec<f64>,
    /// Mass diagonal e^{2u} (flat measure).
    pub b: Vec<f64>,
    pub cell_area: f64,
}

impl TorusOperator {
    pub fn new(t: &ConformalTorus, k: f64) -> Self {
        let tf = TorusFields::new(t);
        let ops = SpectralOps::new(tf.grid);
        let pot: Vec<f64> = tf.r_flat.iter().map(|&r| k * r).collect();
        Self {
            ops,
            pot,
            b: tf.e2u,
            cell_area: tf.grid.cell_area(),
        }
    }

    /// y = -4Δ₀x + pot∘x (flat density).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let lap = self.ops.laplacian(x);
        (0..x.len())
            .map(|i| -4.0 * lap[i] + self.pot[i] * x[i])
            .collect()
    }
}

fn norm2(v: &[f64]) -> f64 {
    cdot(v, v).sqrt()
}

fn b_norm(v: &[f64], b: &[f64]) -> f64 {
    cdot3(v, v, b).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn scale(v: &mut [f64], s: f64) {
    for vi in v.iter_mut() {
        *vi *= s;
    }
}

fn solve_torus(
    t: &ConformalTorus,
    k: f64,
    cfg: &EigenSolverConfig,
    warm_start: Option<&ScalarField>,
) -> Result<SpectralResult> {
    let op = TorusOperator::new(t, k);
    let n = op.b.len();
    let b_mean = csum(op.b.iter().copied()) / n as f64;

    let mut x: Vec<f64> = match warm_start {
        Some(ScalarField::Grid(g)) if g.grid == t.grid() && g.all_finite() => g.data.clone(),
        _ => vec![1.0; n],
    };
    let nrm = b_norm(&x, &op.b);
    if !(nrm > 0.0 && nrm.is_finite()) {
        return Err(Error::ZeroField);
    }
    scale(&mut x, 1.0 / nrm);

    let mut ax = op.apply(&x);
    let mut lambda = cdot(&x, &ax);
    let mut p: Option<Vec<f64>> = None;
    let mut iterations = 0;
    let residual = loop {
        let bx: Vec<f64> = x.iter().zip(&op.b).map(|(xi, bi)| xi * bi).collect();
        let r: Vec<f64> = (0..n).map(|i| ax[i] - lambda * bx[i]).collect();
        let denom = norm2(&ax) + lambda.abs() * norm2(&bx) + f64::MIN_POSITIVE;
        let rel = norm2(&r) / denom;
        if rel <= cfg.tol {
            break rel;
        }
        if iterations >= cfg.max_iter {
            return Err(Error::SolverNoConvergence {
                residual: rel,
                iterations,
                tolerance: cfg.tol,
            });
        }
        iterations += 1;

        let gamma = 1.0 + lambda.abs() * b_mean;
        let w = op.ops.shifted_inverse_laplacian(&r, 4.0, gamma);

        // B-orthonormal basis [x, w, p] (modified Gram-Schmidt, two passes).
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut applies: Vec<Vec<f64>> = vec![ax.clone()];
        for cand in [Some(w), p.take()].into_iter().flatten() {
            let mut v = cand;
            let initial = b_norm(&v, &op.b);
            if !(initial > 0.0 && initial.is_finite()) {
                continue;
            }
            for _ in 0..2 {
                for q in &basis {
                    let proj = cdot3(&v, q, &op.b);
                    axpy(&mut v, -proj, q);
                }
            }
            let nrm = b_norm(&v, &op.b);
            if nrm > 1e-10 * initial && nrm > 0.0 {
                scale(&mut v, 1.0 / nrm);
                applies.push(op.apply(&v));
                basis.push(v);
            }
        }

        // Rayleigh-Ritz in the (at most 3-dimensional) subspace.
        let m = basis.len();
        let mut amat = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let val = cdot(&basis[i], &applies[j]);
                amat[(i, j)] = val;
                amat[(j, i)] = val;
            }
        }
        let eig = amat.symmetric_eigen();
        let mut best = 0;
        for i in 1..m {
            if eig.eigenvalues[i] < eig.eigenvalues[best] {
                best = i;
            }
        }
        let c = eig.eigenvectors.column(best);

        let mut x_new = vec![0.0; n];
        let mut ax_new = vec![0.0; n];
        for i in 0..m {
            axpy(&mut x_new, c[i], &basis[i]);
            axpy(&mut ax_new, c[i], &applies[i]);
        }
        // Search-direction memory: the Ritz combination minus its x-component.
        if m > 1 {
            let mut pn = vec![0.0; n];
            for i in 1..m {
                axpy(&mut pn, c[i], &basis[i]);
            }
            let pn_norm = b_norm(&pn, &op.b);
            p = if pn_norm > 1e-12 {
                scale(&mut pn, 1.0 / pn_norm);
                Some(pn)
            } else {
                None
            };
        }
        let xn = b_norm(&x_new, &op.b);
        scale(&mut x_new, 1.0 / xn);
        scale(&mut ax_new, 1.0 / xn);
        x = x_new;
        ax = ax_new;
        lambda = cdot(&x, &ax);
    };

    // Deterministic sign: measure-weighted mean positive.
    if cdot(&x, &op.b) < 0.0 {
        scale(&mut x, -1.0);
    }
    let (node, min_value) = x
        .iter()
        .copied()
        .enumerate()
        .fold((0usize, f64::INFINITY), |acc, (i, v)| {
            if v < acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    if min_value <= 0.0 {
        return Err(Error::NonPositiveEigenfunction { min_value, node });
    }
    // Physical normalization ∫u² dμ = 1 (the solver norm omits the cell area).
    let phys = (cdot3(&x, &x, &op.b) * op.cell_area).sqrt();
    scale(&mut x, 1.0 / phys);

    Ok(SpectralResult {
        lambda,
        eigenfunction: ScalarField::Grid(GridField {
            grid: t.grid(),
            data: x,
        }),
        k,
        residual,
        iterations,
    })
}

/// Lowest eigenpair of -4Δ + kR. Deterministic for fixed inputs and config;
/// `warm_start` (an input) seeds the iteration, e.g. with the eigenfunction
/// of a nearby metric.
pub fn lowest_eigenpair(
    m: &Metric,
    k: f64,
    cfg: &EigenSolverConfig,
    warm_start: Option<&ScalarField>,
) -> Result<SpectralResult> {
    validate_k(k)?;
    match m {
        Metric::Torus(t) => solve_torus(t, k, cfg, warm_start),
        Metric::Sphere(s) => {
            // Constants minimize the quotient: -4Δ ≥ 0 with kernel the
            // constants, and kR is constant, so λ = kR exactly.
            let lambda = k * s.scalar_curvature_value();
            Ok(SpectralResult {
                lambda,
                eigenfunction: ScalarField::Const(1.0 / s.volume().sqrt()),
                k,
                residual: 0.0,
                iterations: 0,
            })
        }
    }
}

/// Rayleigh quotient ∫(4|∇u|² + kR u²) dμ / ∫u² dμ of a trial field.
pub fn rayleigh_quotient(m: &Metric, k: f64, u: &ScalarField) -> Result<f64> {
    validate_k(k)?;
    match (m, u) {
        (Metric::Torus(t), ScalarField::Grid(g)) => {
            if g.grid != t.grid() {
                return Err(Error::GridMismatch(
                    "trial field grid does not match metric grid".into(),
                ));
            }
            let op = TorusOperator::new(t, k);
            let (gx, gy) = op.ops.grad(&g.data);
            let grad_sq: Vec<f64> = (0..g.data.len())
                .map(|i| gx[i] * gx[i] + gy[i] * gy[i])
                .collect();
            let num = 4.0 * csum(grad_sq.iter().copied()) + cdot3(&g.data, &g.data, &op.pot);
            let den = cdot3(&g.data, &g.data, &op.b);
            if !(den > 0.0 && den.is_finite()) {
                return Err(Error::ZeroField);
            }
            Ok(num / den)
        }
        (Metric::Sphere(s), ScalarField::Const(c)) => {
            if *c == 0.0 || !c.is_finite() {
                return Err(Error::ZeroField);
            }
            Ok(k * s.scalar_curvature_value())
        }
        _ => Err(Error::GridMismatch(
            "trial field family does not match metric family".into(),
        )),
    }
}

/// Scale-invariant eigenvalue λ̄_k = λ_k · V^{2/n}.
pub fn lambda_bar(m: &Metric, k: f64, cfg: &EigenSolverConfig) -> Result<f64> {
    let res = lowest_eigenpair(m, k, cfg, None)?;
    let v = crate::geometry::volume(m);
    Ok(res.lambda * v.powf(2.0 / m.dim() as f64))
}

/// Weight function f with e^{-f/2} equal to the (positive) eigenfunction:
/// f = -2 ln u. Then ∫e^{-f} dμ = ∫u² dμ = 1.
pub fn f_from_eigenfunction(res: &SpectralResult) -> Result<ScalarField> {
    match &res.eigenfunction {
        ScalarField::Grid(g) => {
            let (node, min_value) =
                g.data
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0usize, f64::INFINITY), |acc, (i, v)| {
                        if v < acc.1 {
                            (i, v)
                        } else {
                            acc
                        }
                    });
            if min_value <= 0.0 {
                return Err(Error::NonPositiveEigenfunction { min_value, node });
            }
            Ok(ScalarField::Grid(GridField {
                grid: g.grid,
                data: g.data.iter().map(|&v| -2.0 * v.ln()).collect(),
            }))
        }
        ScalarField::Const(c) => {
            if *c <= 0.0 {
                return Err(Error::NonPositiveEigenfunction {
                    min_value: *c,
                    node: 0,
                });
            }
            Ok(ScalarField::Const(-2.0 * c.ln()))
        }
    }
}
