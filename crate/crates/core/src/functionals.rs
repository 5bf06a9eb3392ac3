//! Functionals along the flows and the right-hand sides of their variation
//! identities, plus Einstein/soliton residuals and the monitored series.
//!
//! Conventions: tensor norms are metric norms, |T|² = g^{ik} g^{jl} T_ij T_kl;
//! on the conformal torus g^{ij} = e^{-2u} δ^{ij}. The weighted measure is
//! e^{-f} dμ. Where two algebraically equal forms of the same quantity exist
//! (gradient vs Laplacian form of F_k, the plain vs completed-square form of
//! the rescaled variation), both are evaluated and compared; disagreement
//! beyond tolerance signals an operator inconsistency and is an error.

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::geometry::{ConformalTorus, Metric, ScalarField, TorusFields};
use crate::grid::{GridField, SpectralOps};
use crate::spectral::{
    f_from_eigenfunction, lowest_eigenpair, EigenSolverConfig, SpectralResult,
};
use crate::sum::cdot;

/// Relative tolerance for dual-form agreement checks.
pub const FORM_TOLERANCE: f64 = 1e-9;

/// Everything the torus functionals need about one (metric, weight) pair.
struct WeightedTorus {
    tf: TorusFields,
    /// e^{-f} at the nodes.
    w: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
    lap_f: Vec<f64>,
    /// Covariant Hessian components of f.
    hxx: Vec<f64>,
    hxy: Vec<f64>,
    hyy: Vec<f64>,
    cell: f64,
}

impl WeightedTorus {
    fn build(t: &ConformalTorus, f: &GridField) -> Result<Self> {
        if f.grid != t.grid() {
            return Err(Error::GridMismatch(
                "weight grid does not match metric grid".into(),
            ));
        }
        if !f.all_finite() {
            return Err(Error::InvalidInput("weight must be finite".into()));
        }
        let tf = TorusFields::new(t);
        let ops = SpectralOps::new(tf.grid);
        let (lap_f, fx, fy) = ops.lap_and_grad(&f.data);
        let fxx = ops.dxx(&f.data);
        let fyy = ops.dyy(&f.data);
        let fxy = ops.dxy(&f.data);
        let n = f.data.len();
        let mut hxx = Vec::with_capacity(n);
        let mut hxy = Vec::with_capacity(n);
        let mut hyy = Vec::with_capacity(n);
        for i in 0..n {
            hxx.push(fxx[i] - tf.ux[i] * fx[i] + tf.uy[i] * fy[i]);
            hxy.push(fxy[i] - tf.uy[i] * fx[i] - tf.ux[i] * fy[i]);
            hyy.push(fyy[i] + tf.ux[i] * fx[i] - tf.uy[i] * fy[i]);
        }
        let w: Vec<f64> = f.data.iter().map(|&v| (-v).exp()).collect();
        let cell = tf.grid.cell_area();
        Ok(Self {
            tf,
            w,
            fx,
            fy,
            lap_f,
            hxx,
            hxy,
            hyy,
            cell,
        })
    }

    /// ∫ e^{-f} dμ.
    fn weighted_measure(&self) -> f64 {
        cdot(&self.w, &self.tf.e2u) * self.cell
    }

    /// Gradient and Laplacian forms of F_k; both reduce to flat densities.
    fn f_k_forms(&self, k: f64) -> (f64, f64) {
        let n = self.w.len();
        let mut grad = crate::sum::Accum::new();
        let mut lap = crate::sum::Accum::new();
        for i in 0..n {
            let pot = k * self.tf.r_flat[i];
            grad.add((pot + self.fx[i] * self.fx[i] + self.fy[i] * self.fy[i]) * self.w[i]);
            lap.add((pot + self.lap_f[i]) * self.w[i]);
        }
        (grad.value() * self.cell, lap.value() * self.cell)
    }

    /// ∫ |Ric + c_h·Hess f - (s/n) g|² e^{-f} dμ with c_h ∈ {0, 1}.
    /// In 2D: Ric = (R/2) e^{2u} δ and (s/n) g = (s/2) e^{2u} δ.
    fn shifted_square_integral(&self, include_hessian: bool, s_over_n: f64) -> f64 {
        let n = self.w.len();
        let mut acc = crate::sum::Accum::new();
        for i in 0..n {
            let diag_metric = (0.5 * self.tf.r[i] - s_over_n) * self.tf.e2u[i];
            let (txx, txy, tyy) = if include_hessian {
                (
                    diag_metric + self.hxx[i],
                    self.hxy[i],
                    diag_metric + self.hyy[i],
                )
            } else {
                (diag_metric, 0.0, diag_metric)
            };
            // |T|²_g e^{-f} dμ = e^{-2u} (Txx² + 2Txy² + Tyy²) e^{-f} dx dy.
            let em2u = self.tf.em2u[i];
            acc.add(
                em2u * em2u * (txx * txx + 2.0 * txy * txy + tyy * tyy)
                    * self.w[i]
                    * self.tf.e2u[i],
            );
        }
        acc.value() * self.cell
    }
}

fn sphere_weighted_measure(s: &crate::geometry::RoundSphere, f_const: f64) -> f64 {
    (-f_const).exp() * s.volume()
}

/// F_k(g, f) = ∫(kR + |∇f|²) e^{-f} dμ (gradient form). The Laplacian form
/// ∫(kR + Δf) e^{-f} dμ is evaluated alongside and must agree to relative
/// 1e-9 (integration by parts); disagreement is a `FormMismatch` error.
pub fn f_k(m: &Metric, f: &ScalarField, k: f64) -> Result<f64> {
    let (grad, lap) = f_k_forms(m, f, k)?;
    let tol = FORM_TOLERANCE * (1.0 + grad.abs());
    if (grad - lap).abs() > tol {
        return Err(Error::FormMismatch {
            form_a: grad,
            form_b: lap,
            tolerance: tol,
        });
    }
    Ok(grad)
}

/// Both forms of F_k without the agreement check.
pub fn f_k_forms(m: &Metric, f: &ScalarField, k: f64) -> Result<(f64, f64)> {
    match (m, f) {
        (Metric::Torus(t), ScalarField::Grid(fg)) => {
            Ok(WeightedTorus::build(t, fg)?.f_k_forms(k))
        }
        (Metric::Sphere(s), ScalarField::Const(c)) => {
            let v = k * s.scalar_curvature_value() * sphere_weighted_measure(s, *c);
            Ok((v, v))
        }
        _ => Err(Error::GridMismatch(
            "weight family does not match metric family".into(),
        )),
    }
}

/// W_k(g, f, τ) = τ² ∫ [k(R + n/(2τ)) + Δf] e^{-f} dμ.
pub fn w_k(m: &Metric, f: &ScalarField, tau: f64, k: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "tau must be positive and finite, got {tau}"
        )));
    }
    let n = m.dim() as f64;
    match (m, f) {
        (Metric::Torus(t), ScalarField::Grid(fg)) => {
            let ctx = WeightedTorus::build(t, fg)?;
            let (_, lap_form) = ctx.f_k_forms(k);
            let value = lap_form + k * n / (2.0 * tau) * ctx.weighted_measure();
            Ok(tau * tau * value)
        }
        (Metric::Sphere(s), ScalarField::Const(c)) => {
            let wm = sphere_weighted_measure(s, *c);
            Ok(tau * tau * k * (s.scalar_curvature_value() + n / (2.0 * tau)) * wm)
        }
        _ => Err(Error::GridMismatch(
            "weight family does not match metric family".into(),
        )),
    }
}

/// W̄_k = e^{-(2s/n) t̄} (F̄_k - k s).
pub fn w_bar_k(f_bar_value: f64, s: f64, t_bar: f64, k: f64, n: usize) -> f64 {
    (-(2.0 * s / n as f64) * t_bar).exp() * (f_bar_value - k * s)
}

/// First-variation right-hand side along the coupled system:
/// 2(k-1)∫|Ric|² e^{-f} dμ + 2∫|Ric + Hess f|² e^{-f} dμ ≥ 0.
pub fn rhs_f_variation(m: &Metric, f: &ScalarField, k: f64) -> Result<f64> {
    match (m, f) {
        (Metric::Torus(t), ScalarField::Grid(fg)) => {
            let ctx = WeightedTorus::build(t, fg)?;
            let ric_sq = ctx.shifted_square_integral(false, 0.0);
            let ric_hess_sq = ctx.shifted_square_integral(true, 0.0);
            Ok(2.0 * (k - 1.0) * ric_sq + 2.0 * ric_hess_sq)
        }
        (Metric::Sphere(s), ScalarField::Const(c)) => {
            // |Ric|² = n ((n-1)/r²)² pointwise and Hess f = 0.
            let n = s.dim() as f64;
            let ric_sq = n * s.ricci_coefficient().powi(2) * sphere_weighted_measure(s, *c);
            Ok(2.0 * (k - 1.0) * ric_sq + 2.0 * ric_sq)
        }
        _ => Err(Error::GridMismatch(
            "weight family does not match metric family".into(),
        )),
    }
}

/// The rescaled first-variation right-hand side in both displayed forms:
///
/// form A: -(2s/n) F̄_k + 2(k-1)∫|Ric|² w + 2∫|Ric + Hess f|² w,
/// form B:  (2s/n) F̄_k - 2ks²/n + 2(k-1)∫|Ric - (s/n)g|² w
///          + 2∫|Ric + Hess f - (s/n)g|² w,
///
/// with w = e^{-f} dμ. The forms are algebraic rearrangements of each other
/// exactly when ∫e^{-f} dμ = 1; in that case they are compared and a
/// disagreement beyond tolerance is a `FormMismatch` error.
pub fn rhs_rescaled_f(m: &Metric, f: &ScalarField, k: f64, s: f64) -> Result<(f64, f64)> {
    let n = m.dim() as f64;
    let s_over_n = s / n;
    let (f_grad, wm, ric_sq, ric_hess_sq, ric_shift_sq, ric_hess_shift_sq) = match (m, f) {
        (Metric::Torus(t), ScalarField::Grid(fg)) => {
            let ctx = WeightedTorus::build(t, fg)?;
            let (grad, _) = ctx.f_k_forms(k);
            (
                grad,
                ctx.weighted_measure(),
                ctx.shifted_square_integral(false, 0.0),
                ctx.shifted_square_integral(true, 0.0),
                ctx.shifted_square_integral(false, s_over_n),
                ctx.shifted_square_integral(true, s_over_n),
            )
        }
        (Metric::Sphere(sp), ScalarField::Const(c)) => {
            let wm = sphere_weighted_measure(sp, *c);
            let cr = sp.ricci_coefficient();
            let plain = n * cr * cr * wm;
            let shifted = n * (cr - s_over_n).powi(2) * wm;
            (k * sp.scalar_curvature_value() * wm, wm, plain, plain, shifted, shifted)
        }
        _ => {
            return Err(Error::GridMismatch(
                "weight family does not match metric family".into(),
            ))
        }
    };

    let form_a = -(2.0 * s / n) * f_grad + 2.0 * (k - 1.0) * ric_sq + 2.0 * ric_hess_sq;
    let form_b = (2.0 * s / n) * f_grad - 2.0 * k * s * s / n
        + 2.0 * (k - 1.0) * ric_shift_sq
        + 2.0 * ric_hess_shift_sq;

    if (wm - 1.0).abs() <= 1e-6 {
        let tol = FORM_TOLERANCE * (1.0 + form_a.abs());
        if (form_a - form_b).abs() > tol {
            return Err(Error::FormMismatch {
                form_a,
                form_b,
                tolerance: tol,
            });
        }
    }
    Ok((form_a, form_b))
}

/// dλ/dt right-hand side at an eigenpair under the rescaled flow:
/// (2s/n)(λ - ks) + 2(k-1)∫|Ric - (s/n)g|² e^{-f} dμ
/// + 2∫|Ric + Hess f - (s/n)g|² e^{-f} dμ, with f the eigen-weight.
pub fn rhs_lambda(m: &Metric, res: &SpectralResult, k: f64, s: f64) -> Result<f64> {
    let f = f_from_eigenfunction(res)?;
    let n = m.dim() as f64;
    let s_over_n = s / n;
    let (shift_ric, shift_ric_hess) = match (m, &f) {
        (Metric::Torus(t), ScalarField::Grid(fg)) => {
            let ctx = WeightedTorus::build(t, fg)?;
            (
                ctx.shifted_square_integral(false, s_over_n),
                ctx.shifted_square_integral(true, s_over_n),
            )
        }
        (Metric::Sphere(sp), ScalarField::Const(c)) => {
            let wm = sphere_weighted_measure(sp, *c);
            let v = n * (sp.ricci_coefficient() - s_over_n).powi(2) * wm;
            (v, v)
        }
        _ => unreachable!("eigenfunction family matches metric family"),
    };
    let value = (2.0 * s / n) * (res.lambda - k * s)
        + 2.0 * (k - 1.0) * shift_ric
        + 2.0 * shift_ric_hess;
    // With s <= 0 and λ <= ks every term is nonnegative; a violation can
    // only mean the operators are inconsistent.
    if s <= 0.0 && res.lambda <= k * s && value < -1e-12 * (1.0 + value.abs()) {
        return Err(Error::InvariantViolation {
            what: format!("rhs_lambda nonnegativity (k = {k}, s = {s})"),
            value,
            bound: 0.0,
        });
    }
    Ok(value)
}

/// ∫|Ric - (s/n) g|² dμ / V; zero iff the metric is (discretely) Einstein
/// with that constant. In 2D the integrand reduces to (R - s)²/2.
pub fn einstein_residual(m: &Metric, s: f64) -> f64 {
    match m {
        Metric::Torus(t) => {
            let tf = TorusFields::new(t);
            let sq: Vec<f64> = tf
                .r
                .iter()
                .map(|&r| 0.5 * (r - s) * (r - s))
                .collect();
            cdot(&sq, &tf.e2u) * tf.grid.cell_area() / tf.volume()
        }
        Metric::Sphere(sp) => {
            let n = sp.dim() as f64;
            n * (sp.ricci_coefficient() - s / n).powi(2)
        }
    }
}

/// ∫|Ric + Hess f - (s/n) g|² e^{-f} dμ; zero iff a gradient soliton with
/// that constant.
pub fn soliton_residual(m: &Metric, f: &ScalarField, s: f64) -> Result<f64> {
    let n = m.dim() as f64;
    match (m, f) {
        (Metric::Torus(t), ScalarField::Grid(fg)) => {
            let ctx = WeightedTorus::build(t, fg)?;
            Ok(ctx.shifted_square_integral(true, s / n))
        }
        (Metric::Sphere(sp), ScalarField::Const(c)) => {
            Ok(n * (sp.ricci_coefficient() - s / n).powi(2) * sphere_weighted_measure(sp, *c))
        }
        _ => Err(Error::GridMismatch(
            "weight family does not match metric family".into(),
        )),
    }
}

/// Names of the monitored series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SeriesName {
    /// λ_k(t).
    M1,
    /// τ²(λ + k n/(2τ)) with τ = τ₀ + t.
    M2,
    /// e^{-(2s/n)t}(λ - ks) for constant s.
    M3,
    /// λ̄_k = λ_k V^{2/n}.
    M4,
    /// F_k at the eigen-weight (equals λ up to discretization).
    Fk,
    /// W_k at the eigen-weight and τ = τ₀ + t.
    Wk,
    /// e^{-(2s/n) t̄}(F̄_k - ks) along a rescaled run.
    WBarK,
}

impl SeriesName {
    pub fn label(&self) -> &'static str {
        match self {
            SeriesName::M1 => "M1",
            SeriesName::M2 => "M2",
            SeriesName::M3 => "M3",
            SeriesName::M4 => "M4",
            SeriesName::Fk => "F_k",
            SeriesName::Wk => "W_k",
            SeriesName::WBarK => "W_bar_k",
        }
    }
}

/// One monitored time series along a trajectory.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MonitorSeries {
    pub name: SeriesName,
    pub k: f64,
    pub s: Option<f64>,
    pub tau0: Option<f64>,
    pub values: Vec<f64>,
}

/// Evaluate the monitored quantities along a trajectory with fresh
/// (warm-started) eigensolves at every state. `tau0` enables M2 and W_k with
/// τ(t) = τ₀ + t; `s_const` enables M3.
pub fn monitor(
    traj: &Trajectory,
    k_values: &[f64],
    tau0: Option<f64>,
    s_const: Option<f64>,
    eig: &EigenSolverConfig,
) -> Result<Vec<MonitorSeries>> {
    if let Some(t0) = tau0 {
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tau0 must be positive and finite, got {t0}"
            )));
        }
    }
    let n = traj.states[0].metric.dim() as f64;
    let volumes: Vec<f64> = traj
        .states
        .iter()
        .map(|st| crate::geometry::volume(&st.metric))
        .collect();

    let mut out = Vec::new();
    for &k in k_values {
        let mut lambda = Vec::with_capacity(traj.states.len());
        let mut fk_series = Vec::with_capacity(traj.states.len());
        let mut wk_series = Vec::with_capacity(traj.states.len());
        let mut warm: Option<ScalarField> = None;
        for st in &traj.states {
            let res = lowest_eigenpair(&st.metric, k, eig, warm.as_ref())?;
            let f = f_from_eigenfunction(&res)?;
            fk_series.push(f_k(&st.metric, &f, k)?);
            if let Some(t0) = tau0 {
                wk_series.push(w_k(&st.metric, &f, t0 + st.t, k)?);
            }
            lambda.push(res.lambda);
            warm = Some(res.eigenfunction);
        }
        let m4: Vec<f64> = lambda
            .iter()
            .zip(&volumes)
            .map(|(&l, &v)| l * v.powf(2.0 / n))
            .collect();
        out.push(MonitorSeries {
            name: SeriesName::M1,
            k,
            s: None,
            tau0: None,
            values: lambda.clone(),
        });
        out.push(MonitorSeries {
            name: SeriesName::M4,
            k,
            s: None,
            tau0: None,
            values: m4,
        });
        out.push(MonitorSeries {
            name: SeriesName::Fk,
            k,
            s: None,
            tau0: None,
            values: fk_series,
        });
        if let Some(t0) = tau0 {
            let m2: Vec<f64> = traj
                .states
                .iter()
                .zip(&lambda)
                .map(|(st, &l)| {
                    let tau = t0 + st.t;
                    tau * tau * (l + k * n / (2.0 * tau))
                })
                .collect();
            out.push(MonitorSeries {
                name: SeriesName::M2,
                k,
                s: None,
                tau0: Some(t0),
                values: m2,
            });
            out.push(MonitorSeries {
                name: SeriesName::Wk,
                k,
                s: None,
                tau0: Some(t0),
                values: wk_series,
            });
        }
        if let Some(s) = s_const {
            let m3: Vec<f64> = traj
                .states
                .iter()
                .zip(&lambda)
                .map(|(st, &l)| (-(2.0 * s / n) * st.t).exp() * (l - k * s))
                .collect();
            out.push(MonitorSeries {
                name: SeriesName::M3,
                k,
                s: Some(s),
                tau0: None,
                values: m3,
            });
        }
    }
    Ok(out)
}

/// Re-export used by the CLI and checks: ∫R dμ / V.
pub use crate::geometry::average_scalar_curvature;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate, FlowKind, FlowState, SProvider};
    use crate::geometry::{sinusoid_u, volume, RoundSphere};
    use crate::grid::Grid;
    use crate::rng::{random_trig_field, SeedSplitter};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn torus_2pi(nn: usize) -> Grid {
        Grid::new(nn, nn, 2.0 * PI, 2.0 * PI).unwrap()
    }

    fn random_weighted_torus(seed: u64, n: usize) -> (Metric, ScalarField) {
        let grid = torus_2pi(n);
        let splitter = SeedSplitter::new(seed);
        let u = random_trig_field(&mut splitter.stream("u"), grid, 3, 0.4);
        let f = random_trig_field(&mut splitter.stream("f"), grid, 3, 0.7);
        (
            Metric::Torus(ConformalTorus::new(u).unwrap()),
            ScalarField::Grid(f),
        )
    }

    /// Shift f so that ∫ e^{-f} dμ = 1.
    fn normalize_weight(m: &Metric, f: &ScalarField) -> ScalarField {
        let wm = crate::flow::weighted_measure(m, f).unwrap();
        let shift = wm.ln();
        match f {
            ScalarField::Grid(g) => ScalarField::Grid(GridField {
                grid: g.grid,
                data: g.data.iter().map(|&v| v + shift).collect(),
            }),
            ScalarField::Const(c) => ScalarField::Const(c + shift),
        }
    }

    #[test]
    fn f_k_trivial_and_sphere_values() {
        let grid = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let m = Metric::Torus(ConformalTorus::flat(grid).unwrap());
        let f = ScalarField::Grid(GridField::zeros(grid));
        for k in [1.0, 2.0, 5.0] {
            assert_abs_diff_eq!(f_k(&m, &f, k).unwrap(), 0.0, epsilon = 1e-14);
        }
        // Unit weighted measure on the sphere: f = ln(4π) makes e^{-f} V = 1.
        let sphere = Metric::Sphere(RoundSphere::new(2, 1.0).unwrap());
        let fs = ScalarField::Const((4.0 * PI).ln());
        assert_abs_diff_eq!(f_k(&sphere, &fs, 3.0).unwrap(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn f_k_gradient_and_laplacian_forms_agree_on_random_inputs() {
        for seed in 0..10 {
            let (m, f) = random_weighted_torus(100 + seed, 64);
            let (grad, lap) = f_k_forms(&m, &f, 2.0).unwrap();
            assert!(
                (grad - lap).abs() <= 1e-9 * (1.0 + grad.abs()),
                "seed {seed}: {grad:.15e} vs {lap:.15e}"
            );
        }
    }

    #[test]
    fn w_k_closed_forms_and_regrouping_identity() {
        // Flat unit-volume torus, f ≡ 0: only the n/(2τ) term survives.
        let grid = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let m = Metric::Torus(ConformalTorus::flat(grid).unwrap());
        let f = ScalarField::Grid(GridField::zeros(grid));
        assert_abs_diff_eq!(w_k(&m, &f, 2.0, 1.0).unwrap(), 2.0, epsilon = 1e-12);
        // Sphere example: τ²(k(R + n/2τ)) with unit weighted measure.
        let sphere = Metric::Sphere(RoundSphere::new(2, 1.0).unwrap());
        let fs = ScalarField::Const((4.0 * PI).ln());
        assert_abs_diff_eq!(w_k(&sphere, &fs, 1.0, 1.0).unwrap(), 3.0, epsilon = 1e-12);
        // Regrouping: W_k = τ²(F_k^lap + k(n/2τ)∫e^{-f}dμ) for any inputs.
        let (m, f) = random_weighted_torus(7, 32);
        let tau = 1.7;
        let k = 2.5;
        let w = w_k(&m, &f, tau, k).unwrap();
        let (_, lap_form) = f_k_forms(&m, &f, k).unwrap();
        let wm = crate::flow::weighted_measure(&m, &f).unwrap();
        let regrouped = tau * tau * (lap_form + k * (2.0 / (2.0 * tau)) * wm);
        assert!((w - regrouped).abs() <= 1e-12 * (1.0 + w.abs()));
    }

    #[test]
    fn w_bar_k_direct_substitutions() {
        assert_abs_diff_eq!(w_bar_k(-2.0, -1.0, 1.0, 2.0, 2), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w_bar_k(1.5, 0.0, 3.0, 2.0, 2), 1.5);
        assert_abs_diff_eq!(w_bar_k(2.0, -1.0, 0.0, 1.0, 2), 3.0);
    }

    #[test]
    fn rhs_f_variation_closed_forms_and_nonnegativity() {
        let grid = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let m = Metric::Torus(ConformalTorus::flat(grid).unwrap());
        let f = ScalarField::Grid(GridField::constant(grid, 0.3));
        assert_abs_diff_eq!(rhs_f_variation(&m, &f, 2.0).unwrap(), 0.0, epsilon = 1e-13);
        // Sphere with unit weighted measure: 2k n(n-1)²/r2².
        let sphere = Metric::Sphere(RoundSphere::new(2, 1.0).unwrap());
        let fs = ScalarField::Const((4.0 * PI).ln());
        assert_abs_diff_eq!(rhs_f_variation(&sphere, &fs, 1.0).unwrap(), 4.0, epsilon = 1e-12);
        for seed in 0..5 {
            let (m, f) = random_weighted_torus(300 + seed, 32);
            assert!(rhs_f_variation(&m, &f, 1.0 + seed as f64).unwrap() >= 0.0);
        }
    }

    #[test]
    fn rescaled_variation_forms_agree_under_unit_measure() {
        // s = 0 reduces both forms to the plain variation.
        let (m, f) = random_weighted_torus(11, 32);
        let f1 = normalize_weight(&m, &f);
        let (a, b) = rhs_rescaled_f(&m, &f1, 2.0, 0.0).unwrap();
        let plain = rhs_f_variation(&m, &f1, 2.0).unwrap();
        assert!((a - plain).abs() <= 1e-11 * (1.0 + plain.abs()));
        assert!((b - plain).abs() <= 1e-9 * (1.0 + plain.abs()));
        // Hand-reduced flat case: both forms vanish.
        let grid = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let flat = Metric::Torus(ConformalTorus::flat(grid).unwrap());
        let f_unit = normalize_weight(&flat, &ScalarField::Grid(GridField::zeros(grid)));
        let (fa, fb) = rhs_rescaled_f(&flat, &f_unit, 1.0, -1.0).unwrap();
        assert_abs_diff_eq!(fa, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fb, 0.0, epsilon = 1e-12);
        // Random inputs at nonzero s.
        for seed in 0..10 {
            let (m, f) = random_weighted_torus(500 + seed, 48);
            let f1 = normalize_weight(&m, &f);
            let (a, b) = rhs_rescaled_f(&m, &f1, 2.0, -1.3).unwrap();
            assert!(
                (a - b).abs() <= 1e-9 * (1.0 + a.abs()),
                "seed {seed}: {a:.15e} vs {b:.15e}"
            );
        }
    }

    #[test]
    fn rhs_lambda_closed_forms() {
        let grid = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let flat = Metric::Torus(ConformalTorus::flat(grid).unwrap());
        let cfg = EigenSolverConfig::default();
        let res = lowest_eigenpair(&flat, 2.0, &cfg, None).unwrap();
        assert_abs_diff_eq!(rhs_lambda(&flat, &res, 2.0, 0.0).unwrap(), 0.0, epsilon = 1e-12);
        // Sphere: dλ/dt of λ(t) = 2/(1-2t) at t = 0 is 4.
        let sphere = Metric::Sphere(RoundSphere::new(2, 1.0).unwrap());
        let sres = lowest_eigenpair(&sphere, 1.0, &cfg, None).unwrap();
        assert_abs_diff_eq!(rhs_lambda(&sphere, &sres, 1.0, 0.0).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn residuals_vanish_exactly_where_they_should() {
        let sphere = Metric::Sphere(RoundSphere::new(3, 2.0).unwrap());
        let s_einstein = sphere.as_sphere().unwrap().scalar_curvature_value();
        assert!(einstein_residual(&sphere, s_einstein).abs() < 1e-14);
        let grid = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let flat = Metric::Torus(ConformalTorus::flat(grid).unwrap());
        let f = ScalarField::Grid(GridField::constant(grid, 0.2));
        assert!(einstein_residual(&flat, 0.0).abs() < 1e-14);
        assert!(soliton_residual(&flat, &f, 0.0).unwrap().abs() < 1e-14);
        // Nonconstant curvature: strictly positive.
        let u = sinusoid_u(torus_2pi(32), 0.3, &[(1, 1)]);
        let bump = Metric::Torus(ConformalTorus::new(u).unwrap());
        assert!(einstein_residual(&bump, 0.0) > 1e-4);
    }

    #[test]
    fn variational_identity_connects_f_k_and_lambda() {
        // F_k(g, f_eig) / ∫e^{-f} dμ = λ to relative 1e-8.
        let u = sinusoid_u(torus_2pi(48), 0.4, &[(2, 1), (1, 2)]);
        let m = Metric::Torus(ConformalTorus::new(u).unwrap());
        let cfg = EigenSolverConfig::default();
        for k in [1.0, 2.0] {
            let res = lowest_eigenpair(&m, k, &cfg, None).unwrap();
            let f = f_from_eigenfunction(&res).unwrap();
            let fk = f_k(&m, &f, k).unwrap();
            let wm = crate::flow::weighted_measure(&m, &f).unwrap();
            let quotient = fk / wm;
            assert!(
                (quotient - res.lambda).abs() <= 1e-8 * (1.0 + res.lambda.abs()),
                "k={k}: {quotient} vs {}",
                res.lambda
            );
        }
    }

    #[test]
    fn f_k_scales_exactly_through_the_rescale_map() {
        // F_k(g, f) = φ · F_k(ḡ, f̄).
        let (m, f) = random_weighted_torus(77, 32);
        for phi in [0.5, 3.0] {
            let (mb, fb) = crate::rescale::to_rescaled(&m, Some(&f), phi).unwrap();
            let lhs = f_k(&m, &f, 2.0).unwrap();
            let rhs = phi * f_k(&mb, fb.as_ref().unwrap(), 2.0).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()),
                "phi={phi}: {lhs:.15e} vs {rhs:.15e}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn w_k_regrouping_identity_random(seed in 0u64..1_000_000, tau in 0.1f64..10.0) {
            let (m, f) = random_weighted_torus(seed, 16);
            let k = 1.0 + (seed % 40) as f64 / 10.0;
            let w = w_k(&m, &f, tau, k).unwrap();
            let (_, lap_form) = f_k_forms(&m, &f, k).unwrap();
            let wm = crate::flow::weighted_measure(&m, &f).unwrap();
            let regrouped = tau * tau * (lap_form + k / tau * wm);
            prop_assert!((w - regrouped).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn monitor_constant_series_on_flat_torus() {
        let grid = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let initial = FlowState::new(Metric::Torus(ConformalTorus::flat(grid).unwrap()));
        let dt = 0.5 * crate::flow::cfl_bound(&initial.metric).unwrap();
        let traj = integrate(&initial, 10.0 * dt, dt, FlowKind::Ricci, &SProvider::Constant(0.0))
            .unwrap();
        let series = monitor(
            &traj,
            &[1.0],
            Some(2.0),
            Some(0.0),
            &EigenSolverConfig::default(),
        )
        .unwrap();
        for s in &series {
            match s.name {
                SeriesName::M1 | SeriesName::M3 | SeriesName::M4 | SeriesName::Fk => {
                    for v in &s.values {
                        assert!(v.abs() < 1e-10, "{:?} drifted to {v}", s.name);
                    }
                }
                SeriesName::M2 | SeriesName::Wk => {
                    // k n τ / 2 with τ = 2 + t: increasing in τ.
                    for w in s.values.windows(2) {
                        assert!(w[1] >= w[0] - 1e-12);
                    }
                    let tau0 = 2.0;
                    assert_abs_diff_eq!(s.values[0], 1.0 * tau0, epsilon = 1e-9);
                }
                SeriesName::WBarK => unreachable!("monitor does not emit W_bar_k"),
            }
        }
    }

    #[test]
    fn monitor_sphere_eigenvalue_follows_closed_form() {
        let initial = FlowState::new(Metric::Sphere(RoundSphere::new(2, 1.0).unwrap()));
        let traj = integrate(&initial, 0.4, 0.005, FlowKind::Ricci, &SProvider::Constant(0.0))
            .unwrap();
        let series = monitor(&traj, &[1.0], None, None, &EigenSolverConfig::default()).unwrap();
        let m1 = series
            .iter()
            .find(|s| s.name == SeriesName::M1)
            .expect("M1 present");
        for (st, &l) in traj.states.iter().zip(&m1.values) {
            let want = 2.0 / (1.0 - 2.0 * st.t);
            assert!((l - want).abs() <= 1e-10 * want, "t={}: {l} vs {want}", st.t);
        }
        // Strictly increasing along the run.
        for w in m1.values.windows(2) {
            assert!(w[1] > w[0]);
        }
        let _ = volume(&traj.final_state().metric);
    }
}
