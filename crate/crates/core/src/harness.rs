//! Verification experiments: derivative-vs-identity checks, monotonicity
//! scans, convergence-order estimation, and solver-oracle comparisons,
//! assembled into a machine-readable report.
//!
//! Skip semantics: a check whose mathematical hypothesis is unmet (e.g. a
//! sign condition on s) is recorded as skipped with the measured hypothesis
//! quantity; skipped checks never count as failures.

use crate::error::{Error, Result};
use crate::flow::{
    cfl_bound, conjugate_f_solve, integrate, weighted_measure, FlowKind, FlowState, SProvider,
    Trajectory, Truncation,
};
use crate::functionals::{
    average_scalar_curvature, einstein_residual, f_k, f_k_forms, monitor, rhs_f_variation,
    rhs_lambda, rhs_rescaled_f, w_bar_k, MonitorSeries, SeriesName,
};
use crate::geometry::{
    sinusoid_u, volume, ConformalTorus, Metric, RoundSphere, ScalarField, TorusFields,
};
use crate::grid::{Grid, GridField};
use crate::rescale::{build_map, correspondence_check, round_trip, to_rescaled};
use crate::rng::{random_trig_field, SeedSplitter};
use crate::spectral::{lowest_eigenpair, rayleigh_quotient, EigenSolverConfig, TorusOperator};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Monotonicity slack: separates genuine violations from solver noise.
pub fn monotonicity_tolerance(value: f64, eig_tol: f64) -> f64 {
    1e-7 * (1.0 + value.abs()) + 10.0 * eig_tol
}

/// Least-squares slope of ln(y) against ln(x), with its standard error.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    assert!(n >= 2, "need at least two refinement levels");
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.max(1e-300).ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if n == 2 {
        return (slope, f64::NAN);
    }
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let fit = my + slope * (x - mx);
            (y - fit) * (y - fit)
        })
        .sum();
    let stderr = (ss_res / (n as f64 - 2.0) / sxx).sqrt();
    (slope, stderr)
}

/// Outcome of one verification check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Set when the check's hypothesis was unmet (or it is report-only);
    /// skipped checks do not count toward the overall verdict.
    pub skipped: Option<String>,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub details: String,
}

impl CheckResult {
    fn bounded(
        name: impl Into<String>,
        observed: f64,
        bound: f64,
        details: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            passed: observed <= bound,
            skipped: None,
            observed,
            expected: 0.0,
            tolerance: bound,
            details: details.into(),
        }
    }

    fn skipped_with(
        name: impl Into<String>,
        reason: impl Into<String>,
        observed: f64,
        details: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            passed: true,
            skipped: Some(reason.into()),
            observed,
            expected: 0.0,
            tolerance: 0.0,
            details: details.into(),
        }
    }

    pub fn counts(&self) -> bool {
        self.skipped.is_none()
    }

    pub fn status(&self) -> &'static str {
        if self.skipped.is_some() {
            "SKIP"
        } else if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

/// A theorem hypothesis measured at run time.
#[derive(Clone, Debug)]
pub struct MonotoneHypothesis {
    pub description: String,
    pub measured: f64,
    pub satisfied: bool,
}

/// Central-difference the coupled first variation of F_k against its
/// identity right-hand side over a decreasing sequence of step sizes.
/// Passes when the smallest-ε relative error is within 1e-4 and the
/// empirical order is at least 1.8.
pub fn check_first_variation(
    m: &Metric,
    f: &ScalarField,
    k: f64,
    eps_seq: &[f64],
    name: &str,
) -> Result<CheckResult> {
    if eps_seq.len() < 2 || eps_seq.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput(
            "need a decreasing sequence of at least two perturbation sizes".into(),
        ));
    }
    let rhs = rhs_f_variation(m, f, k)?;

    // Coupled-system direction at the base point: δg = -2 Ric·ε means
    // δu = -(R/2)·ε on the torus and δr² = -2(n-1)·ε on the sphere;
    // δf = (-Δf + |∇f|² - R)·ε.
    enum Direction {
        Torus { du: Vec<f64>, df: Vec<f64> },
        Sphere { dr2: f64, df: f64 },
    }
    let direction = match (m, f) {
        (Metric::Torus(t), ScalarField::Grid(fg)) => {
            let tf = TorusFields::new(t);
            let ops = crate::grid::SpectralOps::new(t.grid());
            let (lap_f, fx, fy) = ops.lap_and_grad(&fg.data);
            let du: Vec<f64> = tf.r.iter().map(|&r| -0.5 * r).collect();
            let df: Vec<f64> = (0..fg.data.len())
                .map(|i| tf.em2u[i] * (-lap_f[i] + fx[i] * fx[i] + fy[i] * fy[i]) - tf.r[i])
                .collect();
            Direction::Torus { du, df }
        }
        (Metric::Sphere(s), ScalarField::Const(_)) => Direction::Sphere {
            dr2: -2.0 * (s.dim() as f64 - 1.0),
            df: -s.scalar_curvature_value(),
        },
        _ => {
            return Err(Error::GridMismatch(
                "weight family does not match metric family".into(),
            ))
        }
    };

    let evaluate = |eps: f64| -> Result<f64> {
        match (&direction, m, f) {
            (Direction::Torus { du, df }, Metric::Torus(t), ScalarField::Grid(fg)) => {
                let grid = t.grid();
                let mk = |sign: f64| -> Result<f64> {
                    let u: Vec<f64> = t
                        .u()
                        .data
                        .iter()
                        .zip(du)
                        .map(|(&u0, &d)| u0 + sign * eps * d)
                        .collect();
                    let fp: Vec<f64> = fg
                        .data
                        .iter()
                        .zip(df)
                        .map(|(&f0, &d)| f0 + sign * eps * d)
                        .collect();
                    let metric =
                        Metric::Torus(ConformalTorus::new(GridField { grid, data: u })?);
                    f_k(
                        &metric,
                        &ScalarField::Grid(GridField { grid, data: fp }),
                        k,
                    )
                };
                Ok((mk(1.0)? - mk(-1.0)?) / (2.0 * eps))
            }
            (Direction::Sphere { dr2, df }, Metric::Sphere(s), ScalarField::Const(c)) => {
                let mk = |sign: f64| -> Result<f64> {
                    let metric =
                        Metric::Sphere(RoundSphere::new(s.dim(), s.r2() + sign * eps * dr2)?);
                    f_k(&metric, &ScalarField::Const(c + sign * eps * df), k)
                };
                Ok((mk(1.0)? - mk(-1.0)?) / (2.0 * eps))
            }
            _ => unreachable!("direction matches metric family"),
        }
    };

    let mut errs = Vec::with_capacity(eps_seq.len());
    let mut fd_last = 0.0;
    for &eps in eps_seq {
        fd_last = evaluate(eps)?;
        errs.push((fd_last - rhs).abs());
    }
    let scale = rhs.abs().max(1e-12);
    let rel_err = errs.last().unwrap() / scale;
    let floor = 1e-10 * (1.0 + rhs.abs());
    let at_floor = errs.iter().all(|&e| e <= floor);
    let (order, order_err) = fit_loglog_slope(eps_seq, &errs);
    let passed = rel_err <= 1e-4 && (at_floor || order >= 1.8);
    Ok(CheckResult {
        name: name.into(),
        passed,
        skipped: None,
        observed: fd_last,
        expected: rhs,
        tolerance: 1e-4 * scale,
        details: format!(
            "errors per eps: {errs:?}; empirical order {order:.2} (± {order_err:.2}){}",
            if at_floor { "; at rounding floor" } else { "" }
        ),
    })
}

fn lambda_series(traj: &Trajectory, k: f64, eig: &EigenSolverConfig) -> Result<Vec<f64>> {
    let mut warm: Option<ScalarField> = None;
    let mut out = Vec::with_capacity(traj.states.len());
    for st in &traj.states {
        let res = lowest_eigenpair(&st.metric, k, eig, warm.as_ref())?;
        out.push(res.lambda);
        warm = Some(res.eigenfunction);
    }
    Ok(out)
}

fn dlambda_max_rel_error(traj: &Trajectory, k: f64, eig: &EigenSolverConfig) -> Result<f64> {
    let dt = traj.dt;
    let mut warm: Option<ScalarField> = None;
    let mut results = Vec::with_capacity(traj.states.len());
    for st in &traj.states {
        let res = lowest_eigenpair(&st.metric, k, eig, warm.as_ref())?;
        warm = Some(res.eigenfunction.clone());
        results.push(res);
    }
    let mut max_rel: f64 = 0.0;
    for i in 1..traj.states.len() - 1 {
        let st = &traj.states[i];
        let s = match traj.flow_kind {
            FlowKind::Ricci => 0.0,
            _ => traj.s_samples[i],
        };
        let rhs = rhs_lambda(&st.metric, &results[i], k, s)?;
        let fd = (results[i + 1].lambda - results[i - 1].lambda) / (2.0 * dt);
        let denom = rhs
            .abs()
            .max(fd.abs())
            .max(1e-12 * (1.0 + results[i].lambda.abs()));
        max_rel = max_rel.max((fd - rhs).abs() / denom);
    }
    Ok(max_rel)
}

/// Compare the centred finite difference of λ(t) across trajectory samples
/// with the identity right-hand side, then refine dt twice and require the
/// error to shrink at least linearly (least-squares order over 3 levels).
pub fn check_dlambda_identity(
    traj: &Trajectory,
    k: f64,
    provider: &SProvider,
    name: &str,
) -> Result<CheckResult> {
    if traj.states.len() < 3 {
        return Err(Error::InvalidInput(
            "need at least three states to difference λ(t)".into(),
        ));
    }
    if let Some(tr) = &traj.truncation {
        return Err(Error::InvalidInput(format!(
            "trajectory truncated at t = {:.6} ({})",
            tr.t, tr.reason
        )));
    }
    let eig = EigenSolverConfig::tight();
    let t_end = traj.final_state().t;
    let initial = FlowState::new(traj.states[0].metric.clone());
    let dts = [traj.dt, traj.dt / 2.0, traj.dt / 4.0];
    let mut errs = Vec::with_capacity(dts.len());
    errs.push(dlambda_max_rel_error(traj, k, &eig)?);
    for &dt in &dts[1..] {
        let refined = integrate(&initial, t_end, dt, traj.flow_kind, provider)?;
        errs.push(dlambda_max_rel_error(&refined, k, &eig)?);
    }
    let noise_floor = 1e-10;
    let at_floor = errs.iter().all(|&e| e <= noise_floor);
    let (order, order_err) = fit_loglog_slope(&dts, &errs);
    let passed = errs[0] <= 1e-3 && (at_floor || order >= 1.0);
    Ok(CheckResult {
        name: name.into(),
        passed,
        skipped: None,
        observed: errs[0],
        expected: 0.0,
        tolerance: 1e-3,
        details: format!(
            "max relative errors {errs:?} at dt, dt/2, dt/4; refinement order {order:.2} (± {order_err:.2}){}",
            if at_floor { "; at noise floor" } else { "" }
        ),
    })
}

/// Consecutive-difference monotonicity scan with the ε_mono slack. A failed
/// hypothesis turns the check into a skip that records the measured value.
pub fn check_monotone(
    series: &MonitorSeries,
    eig_tol: f64,
    hypothesis: Option<MonotoneHypothesis>,
    einstein_terminal: Option<f64>,
    name: &str,
) -> CheckResult {
    if let Some(h) = &hypothesis {
        if !h.satisfied {
            return CheckResult::skipped_with(
                name,
                format!("hypothesis unmet: {} (measured {:.6e})", h.description, h.measured),
                h.measured,
                format!("series {} k={} not asserted", series.name.label(), series.k),
            );
        }
    }
    let mut worst_drop: f64 = 0.0;
    let mut worst_tol = monotonicity_tolerance(
        series.values.first().copied().unwrap_or(0.0),
        eig_tol,
    );
    let mut strict = true;
    let mut ok = true;
    for w in series.values.windows(2) {
        let diff = w[1] - w[0];
        let tol = monotonicity_tolerance(w[0].abs().max(w[1].abs()), eig_tol);
        if diff < -tol {
            ok = false;
        }
        if diff < worst_drop {
            worst_drop = diff;
            worst_tol = tol;
        }
        if diff <= 0.0 {
            strict = false;
        }
    }
    let mut details = format!(
        "{} values, worst consecutive difference {worst_drop:.3e}, strict: {strict}",
        series.values.len()
    );
    if let Some(h) = &hypothesis {
        details.push_str(&format!(
            "; hypothesis {}: measured {:.6e}",
            h.description, h.measured
        ));
    }
    if let Some(er) = einstein_terminal {
        details.push_str(&format!("; terminal einstein residual {er:.3e}"));
    }
    CheckResult {
        name: name.into(),
        passed: ok,
        skipped: None,
        observed: worst_drop,
        expected: 0.0,
        tolerance: worst_tol,
        details,
    }
}

/// Run both sides of the Ricci ↔ rescaled correspondence and compare
/// metrics, eigenvalue scaling, and the W̄_k monotonicity along the way.
pub fn check_correspondence(
    initial: &FlowState,
    s_const: f64,
    t_end: f64,
    dt: f64,
    k: f64,
    eig_tol: f64,
    name: &str,
) -> Result<CheckResult> {
    let ricci = integrate(initial, t_end, dt, FlowKind::Ricci, &SProvider::Constant(0.0))?;
    let report = correspondence_check(&ricci, s_const, dt)?;

    // Eigenvalue scaling λ(φ g) = λ(g)/φ on a subsample of mapped states.
    let n_dim = initial.metric.dim();
    let times = ricci.times();
    let s_hist = vec![s_const; times.len()];
    let map = build_map(n_dim, &s_hist, &times)?;
    map.require_full()?;
    let eig = EigenSolverConfig::default();
    let stride = (ricci.states.len() / 8).max(1);
    let mut max_eig_rel: f64 = 0.0;
    for (i, st) in ricci.states.iter().enumerate().step_by(stride) {
        let lam = lowest_eigenpair(&st.metric, k, &eig, None)?.lambda;
        let (mapped, _) = to_rescaled(&st.metric, None, map.phi[i])?;
        let lam_mapped = lowest_eigenpair(&mapped, k, &eig, None)?.lambda;
        let rel = (lam_mapped * map.phi[i] - lam).abs() / (1.0 + lam.abs());
        max_eig_rel = max_eig_rel.max(rel);
    }

    // W̄_k along the direct rescaled run: e^{-(2s/n) t̄}(λ - ks) nondecreasing.
    let t_bar_end = *map.t_bar.last().expect("non-empty");
    let direct = integrate(
        initial,
        t_bar_end,
        dt,
        FlowKind::Rescaled,
        &SProvider::Constant(s_const),
    )?;
    let lambdas = lambda_series(&direct, k, &eig)?;
    let wbar: Vec<f64> = direct
        .states
        .iter()
        .zip(&lambdas)
        .map(|(st, &l)| w_bar_k(l, s_const, st.t, k, n_dim))
        .collect();
    let wbar_series = MonitorSeries {
        name: SeriesName::WBarK,
        k,
        s: Some(s_const),
        tau0: None,
        values: wbar,
    };
    let wbar_check = check_monotone(&wbar_series, eig_tol, None, None, "inner");

    let metric_tol = 1e-6;
    let eig_tol_rel = 1e-8;
    let passed =
        report.max_metric_rel_error <= metric_tol && max_eig_rel <= eig_tol_rel && wbar_check.passed;
    Ok(CheckResult {
        name: name.into(),
        passed,
        skipped: None,
        observed: report.max_metric_rel_error,
        expected: 0.0,
        tolerance: metric_tol,
        details: format!(
            "metric discrepancy {:.3e} over {} states (t̄ end {:.4}); eigenvalue scaling error {:.3e} (tol {eig_tol_rel:.1e}); W̄_k worst drop {:.3e} ({})",
            report.max_metric_rel_error,
            report.states_compared,
            report.t_bar_end,
            max_eig_rel,
            wbar_check.observed,
            if wbar_check.passed { "monotone" } else { "NOT monotone" },
        ),
    })
}

/// Lowest eigenvalue by a dense symmetric eigensolve of the identical
/// discrete form (reference route for the iterative solver).
pub fn dense_lowest_eigenvalue(m: &Metric, k: f64) -> Result<f64> {
    match m {
        Metric::Sphere(s) => Ok(k * s.scalar_curvature_value()),
        Metric::Torus(t) => {
            let op = TorusOperator::new(t, k);
            let n = op.b.len();
            if n > 4096 {
                return Err(Error::InvalidInput(format!(
                    "dense oracle limited to grids of at most 64x64 nodes, got {n}"
                )));
            }
            let mut a = DMatrix::<f64>::zeros(n, n);
            let mut e = vec![0.0; n];
            for j in 0..n {
                e[j] = 1.0;
                let col = op.apply(&e);
                e[j] = 0.0;
                for i in 0..n {
                    a[(i, j)] = col[i];
                }
            }
            // Symmetrize rounding noise, then fold in B^{-1/2} on both sides.
            let d: Vec<f64> = op.b.iter().map(|&b| 1.0 / b.sqrt()).collect();
            for i in 0..n {
                for j in 0..=i {
                    let v = 0.5 * (a[(i, j)] + a[(j, i)]) * d[i] * d[j];
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            let eig = a.symmetric_eigen();
            Ok(eig
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min))
        }
    }
}

/// Iterative-vs-dense eigenvalue agreement over a batch of random metrics.
pub fn check_solver_oracle(
    seed: u64,
    count: usize,
    eig: &EigenSolverConfig,
    name: &str,
) -> Result<CheckResult> {
    let splitter = SeedSplitter::new(seed);
    let sizes = [16usize, 16, 16, 16, 24, 24, 32];
    let ks = [1.0, 2.0, 5.0, 3.5];
    let mut max_rel: f64 = 0.0;
    let mut details = String::new();
    for i in 0..count {
        let n = sizes[i % sizes.len()];
        let k = ks[i % ks.len()];
        let grid = Grid::new(n, n, 2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI)?;
        let amp = 0.2 + 0.4 * (i as f64 / count.max(1) as f64);
        let u = random_trig_field(&mut splitter.stream(&format!("oracle/{i}")), grid, 3, amp);
        let m = Metric::Torus(ConformalTorus::new(u)?);
        let iterative = lowest_eigenpair(&m, k, eig, None)?.lambda;
        let dense = dense_lowest_eigenvalue(&m, k)?;
        let rel = (iterative - dense).abs() / (1.0 + dense.abs());
        if rel > max_rel {
            max_rel = rel;
            details = format!(
                "worst case {i}: {n}x{n} grid, k={k}, iterative {iterative:.12e} vs dense {dense:.12e}"
            );
        }
    }
    Ok(CheckResult::bounded(
        name,
        max_rel,
        1e-8,
        format!("{count} random metrics; {details}"),
    ))
}

/// Configuration of the verification suite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Torus grid resolution (nx = ny) and square period length.
    pub grid_n: usize,
    pub domain: f64,
    /// Initial conformal factor: amplitude and mode pairs. Modes of norm
    /// at least 2 keep the curvature scale strong enough that the rescaled
    /// monotonicity conclusions hold away from the theorems' hypotheses.
    pub amplitude: f64,
    pub modes: Vec<(i64, i64)>,
    pub k_values: Vec<f64>,
    pub s_values: Vec<f64>,
    pub steps: usize,
    pub eig_tol: f64,
    /// Optional user-set τ₀ for an extra reported (not asserted) M2 scan.
    pub tau0: Option<f64>,
    /// Substring filters on check names; `None` runs everything.
    pub checks: Option<Vec<String>>,
    /// Number of random metrics in the solver-oracle batch.
    pub oracle_count: usize,
    /// Explicit time step; `None` derives 0.5x the CFL bound. A value above
    /// the bound surfaces as a stability error.
    pub dt_override: Option<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 8161,
            grid_n: 64,
            domain: 2.0 * std::f64::consts::PI,
            amplitude: 0.35,
            modes: vec![(2, 1), (1, 2), (2, 2)],
            k_values: vec![1.0, 2.0, 5.0],
            s_values: vec![0.0, -1.0, -5.0],
            steps: 200,
            eig_tol: 1e-9,
            tau0: None,
            checks: None,
            oracle_count: 20,
            dt_override: None,
        }
    }
}

impl SuiteConfig {
    pub fn torus_grid(&self) -> Result<Grid> {
        Grid::new(self.grid_n, self.grid_n, self.domain, self.domain)
    }

    pub fn initial_torus(&self) -> Result<ConformalTorus> {
        let grid = self.torus_grid()?;
        ConformalTorus::new(sinusoid_u(grid, self.amplitude, &self.modes))
    }

    fn wants(&self, name: &str) -> bool {
        match &self.checks {
            None => true,
            Some(filters) => filters.iter().any(|f| name.contains(f.as_str())),
        }
    }
}

/// Summary of one integrated trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub label: String,
    pub flow: String,
    pub family: String,
    pub states: usize,
    pub t_end: f64,
    pub volume_initial: f64,
    pub volume_final: f64,
    pub max_gauss_bonnet_defect: Option<f64>,
    pub truncation: Option<Truncation>,
}

fn summarize(label: &str, traj: &Trajectory) -> TrajectorySummary {
    let gb = match &traj.states[0].metric {
        Metric::Torus(_) => Some(
            traj.states
                .iter()
                .map(|st| {
                    TorusFields::new(st.metric.as_torus().expect("torus"))
                        .total_scalar_curvature()
                        .abs()
                })
                .fold(0.0, f64::max),
        ),
        Metric::Sphere(_) => None,
    };
    TrajectorySummary {
        label: label.into(),
        flow: traj.flow_kind.name().into(),
        family: traj.states[0].metric.family().into(),
        states: traj.states.len(),
        t_end: traj.final_state().t,
        volume_initial: volume(&traj.states[0].metric),
        volume_final: volume(&traj.final_state().metric),
        max_gauss_bonnet_defect: gb,
        truncation: traj.truncation.clone(),
    }
}

/// Full verification report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: SuiteConfig,
    pub trajectories: Vec<TrajectorySummary>,
    pub monitors: Vec<MonitorSeries>,
    pub checks: Vec<CheckResult>,
    pub overall_pass: bool,
}

impl RunReport {
    pub fn recompute_overall(&mut self) {
        self.overall_pass = self.checks.iter().all(|c| !c.counts() || c.passed);
    }
}

fn format_k(k: f64) -> String {
    if k.fract() == 0.0 {
        format!("{}", k as i64)
    } else {
        format!("{k}")
    }
}

/// Execute the configured verification experiments. Deterministic for a
/// fixed configuration.
pub fn run_suite(cfg: &SuiteConfig) -> Result<RunReport> {
    let splitter = SeedSplitter::new(cfg.seed);
    let eig = EigenSolverConfig {
        tol: cfg.eig_tol,
        max_iter: 2000,
    };
    let mut checks: Vec<CheckResult> = Vec::new();
    let mut monitors: Vec<MonitorSeries> = Vec::new();
    let mut trajectories: Vec<TrajectorySummary> = Vec::new();

    let torus = cfg.initial_torus()?;
    let initial = FlowState::new(Metric::Torus(torus.clone()));
    let dt = cfg
        .dt_override
        .unwrap_or_else(|| 0.5 * cfl_bound(&initial.metric).expect("torus CFL bound"));
    let t_end = cfg.steps as f64 * dt;

    // ---- Trajectories -----------------------------------------------------
    let ricci_traj = integrate(&initial, t_end, dt, FlowKind::Ricci, &SProvider::Constant(0.0))?;
    trajectories.push(summarize("torus/ricci", &ricci_traj));

    let mut rescaled_trajs: Vec<(f64, Trajectory)> = Vec::new();
    for &s in cfg.s_values.iter().filter(|&&s| s != 0.0) {
        let traj = integrate(&initial, t_end, dt, FlowKind::Rescaled, &SProvider::Constant(s))?;
        trajectories.push(summarize(&format!("torus/rescaled_s={s}"), &traj));
        rescaled_trajs.push((s, traj));
    }

    let normalized_traj = integrate(
        &initial,
        t_end,
        dt,
        FlowKind::Normalized,
        &SProvider::AverageScalar,
    )?;
    trajectories.push(summarize("torus/normalized", &normalized_traj));

    let sphere_initial = FlowState::new(Metric::Sphere(RoundSphere::new(2, 1.0)?));
    let sphere_traj = integrate(
        &sphere_initial,
        0.2,
        1e-3,
        FlowKind::Ricci,
        &SProvider::Constant(0.0),
    )?;
    trajectories.push(summarize("sphere/ricci", &sphere_traj));

    // ---- Gauss-Bonnet over every torus run --------------------------------
    if cfg.wants("gauss_bonnet") {
        let mut worst: f64 = 0.0;
        let mut bound: f64 = 1.0;
        for traj in std::iter::once(&ricci_traj)
            .chain(rescaled_trajs.iter().map(|(_, t)| t))
            .chain(std::iter::once(&normalized_traj))
        {
            for st in &traj.states {
                let tf = TorusFields::new(st.metric.as_torus().expect("torus"));
                let defect = tf.total_scalar_curvature().abs();
                let r_linf = tf.r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let b = 1e-8 * (r_linf * tf.volume()).max(1.0);
                if defect / b > worst / bound {
                    worst = defect;
                    bound = b;
                }
            }
        }
        checks.push(CheckResult::bounded(
            "gauss_bonnet/all_flow_states",
            worst,
            bound,
            "max |∫R dμ| over every torus state of every run",
        ));
    }

    // ---- First variation ---------------------------------------------------
    let eps_seq = [1e-3, 5e-4, 2.5e-4];
    if cfg.wants("first_variation/torus") {
        let grid = cfg.torus_grid()?;
        let f = ScalarField::Grid(random_trig_field(
            &mut splitter.stream("first_variation/f"),
            grid,
            3,
            0.6,
        ));
        for &k in &cfg.k_values {
            let name = format!("first_variation/torus/k={}", format_k(k));
            if cfg.wants(&name) {
                checks.push(check_first_variation(
                    &Metric::Torus(torus.clone()),
                    &f,
                    k,
                    &eps_seq,
                    &name,
                )?);
            }
        }
    }
    if cfg.wants("first_variation/sphere") {
        let sphere = Metric::Sphere(RoundSphere::new(2, 1.0)?);
        let f = ScalarField::Const((4.0 * std::f64::consts::PI).ln());
        checks.push(check_first_variation(
            &sphere,
            &f,
            1.0,
            &eps_seq,
            "first_variation/sphere/k=1",
        )?);
    }

    // ---- dλ/dt identity ----------------------------------------------------
    if cfg.wants("dlambda") {
        let steps = cfg.steps.clamp(8, 60);
        let t_short = steps as f64 * dt;
        let provider = SProvider::Constant(-1.0);
        let traj = integrate(&initial, t_short, dt, FlowKind::Rescaled, &provider)?;
        for &k in cfg.k_values.iter().filter(|&&k| k <= 2.0) {
            let name = format!("dlambda/rescaled_s=-1/k={}", format_k(k));
            if cfg.wants(&name) {
                checks.push(check_dlambda_identity(&traj, k, &provider, &name)?);
            }
        }
    }

    // ---- Monotonicity scans -------------------------------------------------
    let scan = |checks: &mut Vec<CheckResult>,
                monitors: &mut Vec<MonitorSeries>,
                traj: &Trajectory,
                label: &str,
                tau0: Option<f64>,
                s_const: Option<f64>,
                assert_names: &[SeriesName],
                hypothesis: Option<MonotoneHypothesis>|
     -> Result<()> {
        let series = monitor(traj, &cfg.k_values, tau0, s_const, &eig)?;
        let terminal_einstein = einstein_residual(
            &traj.final_state().metric,
            average_scalar_curvature(&traj.final_state().metric),
        );
        for ms in &series {
            if assert_names.contains(&ms.name) {
                let name = format!("monotone/{}/{}/k={}", ms.name.label(), label, format_k(ms.k));
                if cfg.wants(&name) {
                    checks.push(check_monotone(
                        ms,
                        cfg.eig_tol,
                        hypothesis.clone(),
                        Some(terminal_einstein),
                        &name,
                    ));
                }
            }
        }
        monitors.extend(series);
        Ok(())
    };

    if cfg.wants("monotone") {
        // Plain Ricci flow: M1, M4 (Perelman-type scale invariant), and M2
        // with the derived τ₀ = -2n/s for each negative constant s.
        scan(
            &mut checks,
            &mut monitors,
            &ricci_traj,
            "torus_ricci",
            None,
            None,
            &[SeriesName::M1, SeriesName::M4],
            None,
        )?;
        for &s in cfg.s_values.iter().filter(|&&s| s < 0.0) {
            let tau0 = -2.0 * 2.0 / s;
            scan(
                &mut checks,
                &mut monitors,
                &ricci_traj,
                &format!("torus_ricci_tau0={tau0}"),
                Some(tau0),
                None,
                &[SeriesName::M2],
                None,
            )?;
        }
        if let Some(tau0) = cfg.tau0 {
            // User-set τ₀: reported, not asserted.
            let series = monitor(&ricci_traj, &cfg.k_values, Some(tau0), None, &eig)?;
            for ms in series.iter().filter(|ms| ms.name == SeriesName::M2) {
                let inner = check_monotone(ms, cfg.eig_tol, None, None, "inner");
                checks.push(CheckResult::skipped_with(
                    format!("monotone/M2/torus_ricci_user_tau0/k={}", format_k(ms.k)),
                    "user-set tau0: reported, not asserted",
                    inner.observed,
                    format!("monotone would be: {}; {}", inner.passed, inner.details),
                ));
            }
        }

        for (s, traj) in &rescaled_trajs {
            let label = format!("torus_rescaled_s={s}");
            let hyp = MonotoneHypothesis {
                description: "s <= 0".into(),
                measured: *s,
                satisfied: *s <= 0.0,
            };
            scan(
                &mut checks,
                &mut monitors,
                traj,
                &label,
                None,
                Some(*s),
                &[SeriesName::M1, SeriesName::M3],
                Some(hyp),
            )?;
        }

        let avg_r = average_scalar_curvature(&normalized_traj.states[0].metric);
        scan(
            &mut checks,
            &mut monitors,
            &normalized_traj,
            "torus_normalized",
            None,
            Some(0.0),
            &[SeriesName::M1],
            Some(MonotoneHypothesis {
                description: "average scalar curvature <= 0".into(),
                measured: avg_r,
                satisfied: avg_r <= 1e-8,
            }),
        )?;

        scan(
            &mut checks,
            &mut monitors,
            &sphere_traj,
            "sphere_ricci",
            None,
            None,
            &[SeriesName::M1, SeriesName::M4],
            None,
        )?;

        // Theorem-faithful provider: s = λ/k keeps the sign hypothesis
        // satisfied with equality in λ ≤ ks.
        if cfg.wants("monotone/M1/torus_eigen_normalized") {
            let k = cfg.k_values.get(1).copied().unwrap_or(2.0);
            let steps = cfg.steps.min(100);
            let traj = integrate(
                &initial,
                steps as f64 * dt,
                dt,
                FlowKind::Rescaled,
                &SProvider::EigenNormalized { k },
            )?;
            let s_max = traj.s_samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let series = monitor(&traj, &[k], None, None, &eig)?;
            let m1 = series
                .iter()
                .find(|ms| ms.name == SeriesName::M1)
                .expect("M1 present");
            checks.push(check_monotone(
                m1,
                cfg.eig_tol,
                Some(MonotoneHypothesis {
                    description: "s = λ/k <= 0 along the run".into(),
                    measured: s_max,
                    satisfied: s_max <= 0.0,
                }),
                None,
                &format!("monotone/M1/torus_eigen_normalized/k={}", format_k(k)),
            ));
            trajectories.push(summarize("torus/eigen_normalized", &traj));
        }
    }

    // ---- Normalized-flow contract ------------------------------------------
    if cfg.wants("normalized") {
        let s_max = normalized_traj
            .s_samples
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        checks.push(CheckResult::bounded(
            "normalized/average_s_is_zero",
            s_max,
            1e-8,
            "Gauss–Bonnet forces s = ∫R dμ / V = 0 on the torus",
        ));
        let v0 = volume(&normalized_traj.states[0].metric);
        let drift = normalized_traj
            .states
            .iter()
            .map(|st| ((volume(&st.metric) - v0) / v0).abs())
            .fold(0.0, f64::max);
        checks.push(CheckResult::bounded(
            "normalized/volume_preserved",
            drift,
            1e-6,
            "relative volume drift along the normalized run",
        ));
    }

    // ---- Rescale correspondence ----------------------------------------------
    if cfg.wants("rescale/closed_forms") {
        let dt_map = 1e-3;
        let n_t = 500;
        let t_grid: Vec<f64> = (0..=n_t).map(|i| i as f64 * dt_map).collect();
        let s_hist = vec![-1.0; t_grid.len()];
        let map = build_map(2, &s_hist, &t_grid)?;
        let tau = map.tau.as_ref().expect("constant s");
        let mut worst: f64 = 0.0;
        for (i, &t) in t_grid.iter().enumerate() {
            worst = worst.max((map.phi[i] - 1.0 / (1.0 + t)).abs());
            worst = worst.max((map.t_bar[i] - (1.0 + t).ln()).abs());
            worst = worst.max((tau[i] - (4.0 + t)).abs());
        }
        checks.push(CheckResult::bounded(
            "rescale/closed_forms_s=-1",
            worst,
            1e-10,
            "max deviation of φ, t̄, τ from 1/(1+t), ln(1+t), 4+t",
        ));
    }
    if cfg.wants("rescale/round_trip") {
        let grid = cfg.torus_grid()?;
        let u = random_trig_field(&mut splitter.stream("round_trip/u"), grid, 3, 0.5);
        let f = ScalarField::Grid(random_trig_field(
            &mut splitter.stream("round_trip/f"),
            grid,
            3,
            0.8,
        ));
        let m = Metric::Torus(ConformalTorus::new(u)?);
        let err = round_trip(&m, Some(&f), 7.3)?.max(round_trip(&m, Some(&f), 1e-6)?);
        checks.push(CheckResult::bounded(
            "rescale/round_trip",
            err,
            1e-10,
            "worst componentwise round-trip error at φ = 7.3 and φ = 1e-6",
        ));
    }
    if cfg.wants("rescale/f_k_scaling") {
        let grid = cfg.torus_grid()?;
        let u = random_trig_field(&mut splitter.stream("fk_scaling/u"), grid, 3, 0.4);
        let f = ScalarField::Grid(random_trig_field(
            &mut splitter.stream("fk_scaling/f"),
            grid,
            3,
            0.7,
        ));
        let m = Metric::Torus(ConformalTorus::new(u)?);
        let k = 2.0;
        let mut worst: f64 = 0.0;
        for phi in [0.5, 3.0] {
            let (mb, fb) = to_rescaled(&m, Some(&f), phi)?;
            let lhs = f_k(&m, &f, k)?;
            let rhs = phi * f_k(&mb, fb.as_ref().expect("weight carried"), k)?;
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
        checks.push(CheckResult::bounded(
            "rescale/f_k_scaling",
            worst,
            1e-10,
            "relative defect of F_k(g, f) = φ·F_k(ḡ, f̄) at φ ∈ {0.5, 3}",
        ));
    }
    if cfg.wants("correspondence/torus") {
        checks.push(check_correspondence(
            &initial,
            -1.0,
            (cfg.steps.min(120)) as f64 * dt,
            dt,
            cfg.k_values.first().copied().unwrap_or(1.0),
            cfg.eig_tol,
            "correspondence/torus_s=-1",
        )?);
    }
    if cfg.wants("correspondence/sphere") {
        checks.push(check_correspondence(
            &sphere_initial,
            -2.0,
            0.3,
            1e-3,
            1.0,
            cfg.eig_tol,
            "correspondence/sphere_s=-2",
        )?);
    }

    // ---- Solver oracle ---------------------------------------------------------
    if cfg.wants("oracle/dense") {
        checks.push(check_solver_oracle(
            cfg.seed ^ 0x5eed,
            cfg.oracle_count,
            &eig,
            "oracle/dense_eigensolver",
        )?);
    }

    // ---- Scale invariance of λ̄ ---------------------------------------------
    if cfg.wants("scale_invariance") {
        let mut worst: f64 = 0.0;
        let base_m = Metric::Torus(torus.clone());
        let k = cfg.k_values.first().copied().unwrap_or(1.0);
        let base = crate::spectral::lambda_bar(&base_m, k, &eig)?;
        for c in [0.5, 2.0, 10.0] {
            let (scaled, _) = to_rescaled(&base_m, None, c)?;
            let val = crate::spectral::lambda_bar(&scaled, k, &eig)?;
            worst = worst.max((val - base).abs() / (1.0 + base.abs()));
        }
        let sphere_base = crate::spectral::lambda_bar(
            &Metric::Sphere(RoundSphere::new(2, 1.0)?),
            k,
            &eig,
        )?;
        for c in [0.5, 2.0, 10.0] {
            let val = crate::spectral::lambda_bar(
                &Metric::Sphere(RoundSphere::new(2, c)?),
                k,
                &eig,
            )?;
            worst = worst.max((val - sphere_base).abs() / (1.0 + sphere_base.abs()));
        }
        checks.push(CheckResult::bounded(
            "scale_invariance/lambda_bar",
            worst,
            1e-9,
            "relative variation of λ̄_k under g → c·g, c ∈ {0.5, 2, 10}, both families",
        ));
    }

    // ---- Dual-form operator consistency --------------------------------------
    if cfg.wants("forms/f_k") {
        let grid = cfg.torus_grid()?;
        let mut rng_u = splitter.stream("forms/u");
        let mut rng_f = splitter.stream("forms/f");
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let u = random_trig_field(&mut rng_u, grid, 3, 0.45);
            let f = ScalarField::Grid(random_trig_field(&mut rng_f, grid, 3, 0.7));
            let m = Metric::Torus(ConformalTorus::new(u)?);
            let (grad, lap) = f_k_forms(&m, &f, 2.0)?;
            worst = worst.max((grad - lap).abs() / (1.0 + grad.abs()));
        }
        checks.push(CheckResult::bounded(
            "forms/f_k_gradient_vs_laplacian",
            worst,
            1e-9,
            "100 random inputs at the configured grid",
        ));
    }
    if cfg.wants("forms/rescaled_variation") {
        let grid = cfg.torus_grid()?;
        let mut rng_u = splitter.stream("forms2/u");
        let mut rng_f = splitter.stream("forms2/f");
        let mut worst: f64 = 0.0;
        for i in 0..20 {
            let u = random_trig_field(&mut rng_u, grid, 3, 0.45);
            let f0 = random_trig_field(&mut rng_f, grid, 3, 0.7);
            let m = Metric::Torus(ConformalTorus::new(u)?);
            // Normalize to unit weighted measure so the two displayed forms
            // are algebraic rearrangements.
            let wm = weighted_measure(&m, &ScalarField::Grid(f0.clone()))?;
            let f = ScalarField::Grid(GridField {
                grid,
                data: f0.data.iter().map(|&v| v + wm.ln()).collect(),
            });
            let s = -1.0 - (i % 3) as f64;
            // A mismatch is a failed check, not an aborted suite.
            let (a, b) = match rhs_rescaled_f(&m, &f, 2.0, s) {
                Ok(forms) => forms,
                Err(Error::FormMismatch { form_a, form_b, .. }) => (form_a, form_b),
                Err(e) => return Err(e),
            };
            worst = worst.max((a - b).abs() / (1.0 + a.abs()));
        }
        checks.push(CheckResult::bounded(
            "forms/rescaled_variation_a_vs_b",
            worst,
            1e-9,
            "20 random unit-measure inputs, s ∈ {-1, -2, -3}",
        ));
    }

    // ---- Rayleigh-quotient minimality -----------------------------------------
    if cfg.wants("rayleigh/minimum") {
        let grid = cfg.torus_grid()?;
        let m = Metric::Torus(torus.clone());
        let k = cfg.k_values.first().copied().unwrap_or(1.0);
        let res = lowest_eigenpair(&m, k, &eig, None)?;
        let mut rng = splitter.stream("rayleigh/trials");
        let mut worst_margin: f64 = f64::INFINITY;
        for _ in 0..100 {
            let trial = random_trig_field(&mut rng, grid, 4, 1.0);
            let rq = rayleigh_quotient(&m, k, &ScalarField::Grid(trial))?;
            worst_margin = worst_margin.min(rq - res.lambda);
        }
        checks.push(CheckResult::bounded(
            "rayleigh/minimum",
            -worst_margin,
            1e-9 * (1.0 + res.lambda.abs()),
            format!("smallest quotient margin over 100 trials: {worst_margin:.3e}"),
        ));
    }

    // ---- Conjugate weight conservation ----------------------------------------
    if cfg.wants("conjugate/weighted_measure") {
        let traj = rescaled_trajs
            .first()
            .map(|(_, t)| t)
            .unwrap_or(&ricci_traj);
        let grid = cfg.torus_grid()?;
        let f_term = ScalarField::Grid(random_trig_field(
            &mut splitter.stream("conjugate/f"),
            grid,
            2,
            0.5,
        ));
        let fs = conjugate_f_solve(traj, &f_term)?;
        let w_end = weighted_measure(&traj.final_state().metric, fs.last().expect("non-empty"))?;
        let drift = traj
            .states
            .iter()
            .zip(&fs)
            .map(|(st, f)| ((weighted_measure(&st.metric, f).unwrap() - w_end) / w_end).abs())
            .fold(0.0, f64::max);
        checks.push(CheckResult::bounded(
            "conjugate/weighted_measure",
            drift,
            1e-6,
            "relative drift of ∫e^{-f} dμ along the backward solve",
        ));
    }

    // ---- Sphere eigenvalue law --------------------------------------------------
    if cfg.wants("sphere/eigenvalue_law") {
        let mut worst: f64 = 0.0;
        for &k in &cfg.k_values {
            let series = monitor(&sphere_traj, &[k], None, None, &eig)?;
            let m1 = series
                .iter()
                .find(|ms| ms.name == SeriesName::M1)
                .expect("M1 present");
            for (st, &l) in sphere_traj.states.iter().zip(&m1.values) {
                let want = 2.0 * k / (1.0 - 2.0 * st.t);
                worst = worst.max((l - want).abs() / want.abs());
            }
        }
        checks.push(CheckResult::bounded(
            "sphere/eigenvalue_law",
            worst,
            1e-10,
            "λ(t) vs 2k/(1-2t) under plain flow, k over the configured list",
        ));
    }

    let mut report = RunReport {
        config: cfg.clone(),
        trajectories,
        monitors,
        checks,
        overall_pass: false,
    };
    report.recompute_overall();
    Ok(report)
}
