//! Time stepping for Ricci flow and rescaled Ricci flow, plus the backward
//! integration of the conjugate weight equation along a stored trajectory.
//!
//! On the conformal torus the flows reduce to scalar equations for u:
//! plain flow `∂u/∂t = e^{-2u} Δ₀u`, rescaled flow `∂u/∂t = (s - R)/2`.
//! On the round sphere they reduce to ODEs for r²: the plain flow is the
//! exact linear law `r²(t) = r²(0) - 2(n-1)t`, the rescaled flow is
//! `d(r²)/dt = -2(n-1) + (2s/n) r²`.
//!
//! Time integration is classical 4-stage Runge–Kutta. The driving scalar
//! s(t) is sampled once per step at the step's start (no re-evaluation at
//! RK stages), so providers that require an eigensolve cost one solve per
//! step; the induced O(dt) provider error is absorbed into the monotonicity
//! tolerances.
//!
//! The conjugate equation `∂f/∂t = -Δf + |∇f|² - R (+ s)` is anti-diffusive
//! forward in time; it is only integrated backward, from the final state of
//! a stored metric trajectory down to its initial time, which is the stable
//! direction.

use crate::error::{Error, Result};
use crate::geometry::{
    ConformalTorus, Metric, RoundSphere, ScalarField, TorusFields, U_SUP_CAP,
};
use crate::grid::{GridField, SpectralOps};
use crate::spectral::{lowest_eigenpair, EigenSolverConfig, SpectralResult};
use crate::sum::cdot;

/// Which evolution equation a trajectory follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Ricci,
    Rescaled,
    /// Rescaled flow with s forced to the average scalar curvature
    /// (Hamilton's normalized flow); preserves volume.
    Normalized,
}

impl FlowKind {
    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::Ricci => "ricci",
            FlowKind::Rescaled => "rescaled",
            FlowKind::Normalized => "normalized",
        }
    }
}

/// Source of the rescaling scalar s(t).
#[derive(Clone, Debug)]
pub enum SProvider {
    Constant(f64),
    /// s = ∫R dμ / V (zero on any torus by Gauss–Bonnet).
    AverageScalar,
    /// s = λ_k / k, the test-function quotient evaluated at the eigen-weight.
    EigenNormalized { k: f64 },
    /// s = ∫(kR + |∇φ|²) e^{-φ} dμ / (k ∫ e^{-φ} dμ) for a fixed test
    /// function φ.
    TestFunction { phi: ScalarField, k: f64 },
}

impl SProvider {
    pub fn describe(&self) -> String {
        match self {
            SProvider::Constant(s0) => format!("constant({s0})"),
            SProvider::AverageScalar => "average_scalar".into(),
            SProvider::EigenNormalized { k } => format!("eigen_normalized(k={k})"),
            SProvider::TestFunction { k, .. } => format!("test_function(k={k})"),
        }
    }
}

/// One snapshot along a flow.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub metric: Metric,
    pub f: Option<ScalarField>,
}

impl FlowState {
    pub fn new(metric: Metric) -> Self {
        Self {
            t: 0.0,
            metric,
            f: None,
        }
    }
}

/// Why a trajectory stopped early.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Truncation {
    pub reason: String,
    pub t: f64,
}

/// Ordered flow states at uniform time spacing, with the s-history.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<FlowState>,
    /// s sampled at every state (the value frozen for the step starting
    /// there; the final entry is diagnostic only).
    pub s_samples: Vec<f64>,
    pub dt: f64,
    pub flow_kind: FlowKind,
    pub truncation: Option<Truncation>,
}

impl Trajectory {
    pub fn final_state(&self) -> &FlowState {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.truncation.is_none()
    }
}

/// Largest admissible explicit step for the diffusion part on this metric;
/// `None` for the sphere family (pure ODE).
pub fn cfl_bound(m: &Metric) -> Option<f64> {
    match m {
        Metric::Torus(t) => {
            let g = t.grid();
            let h = g.hx().min(g.hy());
            let min_e2u = (2.0 * t.u().min_value()).exp();
            Some(0.2 * h * h * min_e2u / 4.0)
        }
        Metric::Sphere(_) => None,
    }
}

/// Evaluate s(t) for a provider at a state. `spectral` must hold a result
/// for the state's metric when the provider is `EigenNormalized`.
pub fn s_value(
    provider: &SProvider,
    state: &FlowState,
    spectral: Option<&SpectralResult>,
) -> Result<f64> {
    match provider {
        SProvider::Constant(s0) => {
            if !s0.is_finite() {
                return Err(Error::InvalidInput("constant s must be finite".into()));
            }
            Ok(*s0)
        }
        SProvider::AverageScalar => Ok(crate::geometry::average_scalar_curvature(&state.metric)),
        SProvider::EigenNormalized { k } => {
            let res = spectral.ok_or_else(|| {
                Error::InvalidInput(
                    "EigenNormalized provider requires a spectral result for the current metric"
                        .into(),
                )
            })?;
            Ok(res.lambda / k)
        }
        SProvider::TestFunction { phi, k } => test_function_s(&state.metric, phi, *k),
    }
}

/// The test-function quotient ∫(kR + |∇φ|²)e^{-φ}dμ / (k ∫e^{-φ}dμ).
fn test_function_s(m: &Metric, phi: &ScalarField, k: f64) -> Result<f64> {
    if !phi.all_finite() {
        return Err(Error::InvalidInput("test function must be finite".into()));
    }
    match (m, phi) {
        (Metric::Torus(t), ScalarField::Grid(pg)) => {
            if pg.grid != t.grid() {
                return Err(Error::GridMismatch(
                    "test function grid does not match metric grid".into(),
                ));
            }
            let tf = TorusFields::new(t);
            let ops = SpectralOps::new(tf.grid);
            let (px, py) = ops.grad(&pg.data);
            let w: Vec<f64> = pg.data.iter().map(|&p| (-p).exp()).collect();
            // (kR + |∇φ|²_g) e^{-φ} dμ reduces to a flat density.
            let num_density: Vec<f64> = (0..w.len())
                .map(|i| k * tf.r_flat[i] + px[i] * px[i] + py[i] * py[i])
                .collect();
            let num = cdot(&num_density, &w);
            let den = k * cdot(&w, &tf.e2u);
            Ok(num / den)
        }
        (Metric::Sphere(s), ScalarField::Const(_)) => Ok(s.scalar_curvature_value()),
        _ => Err(Error::GridMismatch(
            "test function family does not match metric family".into(),
        )),
    }
}

fn torus_rhs(ops: &SpectralOps, u: &[f64], s: f64) -> Vec<f64> {
    let lap = ops.laplacian(u);
    (0..u.len())
        .map(|i| 0.5 * s + (-2.0 * u[i]).exp() * lap[i])
        .collect()
}

/// One RK4 step of the conformal factor under `∂u/∂t = s/2 + e^{-2u}Δ₀u`.
fn torus_step(t: &ConformalTorus, dt: f64, s: f64, t_now: f64) -> Result<ConformalTorus> {
    let bound = cfl_bound(&Metric::Torus(t.clone())).expect("torus has a CFL bound");
    if dt > bound {
        return Err(Error::StabilityViolation {
            dt,
            bound,
            t: t_now,
        });
    }
    let grid = t.grid();
    let ops = SpectralOps::new(grid);
    let u = &t.u().data;
    let n = u.len();
    let stage = |base: &[f64], h: f64, k: &[f64]| -> Vec<f64> {
        (0..n).map(|i| base[i] + h * k[i]).collect()
    };
    let k1 = torus_rhs(&ops, u, s);
    let k2 = torus_rhs(&ops, &stage(u, 0.5 * dt, &k1), s);
    let k3 = torus_rhs(&ops, &stage(u, 0.5 * dt, &k2), s);
    let k4 = torus_rhs(&ops, &stage(u, dt, &k3), s);
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        next.push(u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    let field = GridField { grid, data: next };
    if !field.all_finite() {
        return Err(Error::BlowUp {
            reason: "non-finite conformal factor".into(),
            t: t_now,
        });
    }
    if field.linf() > U_SUP_CAP {
        return Err(Error::BlowUp {
            reason: format!("‖u‖∞ = {:.3e} exceeds cap {U_SUP_CAP}", field.linf()),
            t: t_now,
        });
    }
    let next_torus = ConformalTorus::new(field)?;
    check_gauss_bonnet(&next_torus, t_now)?;
    Ok(next_torus)
}

/// Discrete Gauss–Bonnet guard: ∫R dμ must stay at rounding level on every
/// torus produced during a flow run.
fn check_gauss_bonnet(t: &ConformalTorus, t_now: f64) -> Result<()> {
    let tf = TorusFields::new(t);
    let total = tf.total_scalar_curvature();
    let r_linf = tf.r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let bound = 1e-8 * (r_linf * tf.volume()).max(1.0);
    if total.abs() > bound {
        return Err(Error::InvariantViolation {
            what: format!("total scalar curvature on torus at t = {t_now:.6}"),
            value: total,
            bound,
        });
    }
    Ok(())
}

fn sphere_step(s_metric: &RoundSphere, dt: f64, s: Option<f64>, t_now: f64) -> Result<RoundSphere> {
    let n = s_metric.dim() as f64;
    let r2 = s_metric.r2();
    let next = match s {
        // Plain flow: exact linear law.
        None => r2 - 2.0 * (n - 1.0) * dt,
        // Rescaled flow: RK4 on the linear ODE r2' = -2(n-1) + (2s/n) r2.
        Some(sv) => {
            let rhs = |r: f64| -2.0 * (n - 1.0) + (2.0 * sv / n) * r;
            let k1 = rhs(r2);
            let k2 = rhs(r2 + 0.5 * dt * k1);
            let k3 = rhs(r2 + 0.5 * dt * k2);
            let k4 = rhs(r2 + dt * k3);
            r2 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        }
    };
    if !(next > 0.0 && next.is_finite()) {
        return Err(Error::BlowUp {
            reason: format!("sphere squared radius reached {next:.6e}"),
            t: t_now,
        });
    }
    RoundSphere::new(s_metric.dim(), next)
}

/// Advance a metric one step; `s = None` selects the plain Ricci flow.
fn advance_metric(m: &Metric, dt: f64, s: Option<f64>, t_now: f64) -> Result<Metric> {
    match m {
        Metric::Torus(t) => Ok(Metric::Torus(torus_step(t, dt, s.unwrap_or(0.0), t_now)?)),
        Metric::Sphere(sp) => Ok(Metric::Sphere(sphere_step(sp, dt, s, t_now)?)),
    }
}

/// One step of plain Ricci flow ∂g/∂t = -2 Ric.
pub fn step_ricci(state: &FlowState, dt: f64) -> Result<FlowState> {
    validate_dt(dt)?;
    let metric = advance_metric(&state.metric, dt, None, state.t)?;
    Ok(FlowState {
        t: state.t + dt,
        metric,
        f: None,
    })
}

/// One step of rescaled Ricci flow ∂g/∂t = -2(Ric - (s/n) g), with s sampled
/// from the provider at the step start and frozen across the RK stages.
pub fn step_rescaled(state: &FlowState, dt: f64, provider: &SProvider) -> Result<FlowState> {
    validate_dt(dt)?;
    let spectral = match provider {
        SProvider::EigenNormalized { k } => Some(lowest_eigenpair(
            &state.metric,
            *k,
            &EigenSolverConfig::default(),
            None,
        )?),
        _ => None,
    };
    let s = s_value(provider, state, spectral.as_ref())?;
    let metric = advance_metric(&state.metric, dt, Some(s), state.t)?;
    Ok(FlowState {
        t: state.t + dt,
        metric,
        f: None,
    })
}

fn validate_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "time step must be positive and finite, got {dt}"
        )));
    }
    Ok(())
}

/// Integrate a flow from `initial` to time `t_end` (rounded up to a whole
/// number of uniform steps). Blow-up truncates the trajectory and flags it;
/// stability violations and other contract failures are errors.
pub fn integrate(
    initial: &FlowState,
    t_end: f64,
    dt: f64,
    flow_kind: FlowKind,
    provider: &SProvider,
) -> Result<Trajectory> {
    validate_dt(dt)?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "integration horizon must be positive and finite, got {t_end}"
        )));
    }
    let n_steps = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;

    let average = SProvider::AverageScalar;
    let effective: &SProvider = match flow_kind {
        FlowKind::Normalized => &average,
        _ => provider,
    };

    let mut states = Vec::with_capacity(n_steps + 1);
    let mut s_samples = Vec::with_capacity(n_steps + 1);
    states.push(FlowState {
        t: 0.0,
        metric: initial.metric.clone(),
        f: initial.f.clone(),
    });
    let mut truncation = None;
    let mut warm: Option<ScalarField> = None;

    for i in 0..n_steps {
        let t_now = i as f64 * dt;
        let current = states.last().expect("non-empty");
        let s = match flow_kind {
            FlowKind::Ricci => {
                s_samples.push(0.0);
                None
            }
            _ => {
                let spectral = match effective {
                    SProvider::EigenNormalized { k } => {
                        let res = lowest_eigenpair(
                            &current.metric,
                            *k,
                            &EigenSolverConfig::default(),
                            warm.as_ref(),
                        )?;
                        warm = Some(res.eigenfunction.clone());
                        Some(res)
                    }
                    _ => None,
                };
                let s = s_value(effective, current, spectral.as_ref())?;
                s_samples.push(s);
                Some(s)
            }
        };
        match advance_metric(&current.metric, dt, s, t_now) {
            Ok(metric) => states.push(FlowState {
                t: (i + 1) as f64 * dt,
                metric,
                f: None,
            }),
            Err(Error::BlowUp { reason, t }) => {
                truncation = Some(Truncation { reason, t });
                break;
            }
            Err(e) => return Err(e),
        }
    }

    // Diagnostic s at the final state.
    let last = states.last().expect("non-empty");
    let s_last = match flow_kind {
        FlowKind::Ricci => 0.0,
        _ => {
            let spectral = match effective {
                SProvider::EigenNormalized { k } => Some(lowest_eigenpair(
                    &last.metric,
                    *k,
                    &EigenSolverConfig::default(),
                    warm.as_ref(),
                )?),
                _ => None,
            };
            s_value(effective, last, spectral.as_ref())?
        }
    };
    s_samples.push(s_last);

    Ok(Trajectory {
        states,
        s_samples,
        dt,
        flow_kind,
        truncation,
    })
}

/// Conjugate-equation right-hand side on the torus as a flat vector:
/// G = -Δ_g f + |∇f|²_g - R + s.
fn conjugate_rhs_torus(tf: &TorusFields, ops: &SpectralOps, f: &[f64], s: f64) -> Vec<f64> {
    let (lap, fx, fy) = ops.lap_and_grad(f);
    (0..f.len())
        .map(|i| tf.em2u[i] * (-lap[i] + fx[i] * fx[i] + fy[i] * fy[i]) - tf.r[i] + s)
        .collect()
}

const F_SUP_CAP: f64 = 30.0;

/// Integrate the conjugate weight equation backward from `f_terminal` at the
/// trajectory's final time down to its initial time, against the stored
/// metrics. Returns f(t_i) aligned with the trajectory states; along the
/// result, ∫e^{-f} dμ is conserved to integrator order.
pub fn conjugate_f_solve(traj: &Trajectory, f_terminal: &ScalarField) -> Result<Vec<ScalarField>> {
    if let Some(tr) = &traj.truncation {
        return Err(Error::InvalidInput(format!(
            "conjugate solve requires a complete trajectory; this one truncated at t = {:.6} ({})",
            tr.t, tr.reason
        )));
    }
    if !f_terminal.all_finite() {
        return Err(Error::InvalidInput("terminal weight must be finite".into()));
    }
    let n_states = traj.states.len();
    let dt = traj.dt;
    let mut out: Vec<Option<ScalarField>> = vec![None; n_states];

    match (&traj.final_state().metric, f_terminal) {
        (Metric::Torus(t_last), ScalarField::Grid(fg)) => {
            if fg.grid != t_last.grid() {
                return Err(Error::GridMismatch(
                    "terminal weight grid does not match trajectory grid".into(),
                ));
            }
            let ops = SpectralOps::new(t_last.grid());
            let mut f = fg.data.clone();
            out[n_states - 1] = Some(ScalarField::Grid(fg.clone()));
            for i in (0..n_states - 1).rev() {
                let s = traj.s_samples[i];
                let s_opt = match traj.flow_kind {
                    FlowKind::Ricci => None,
                    _ => Some(s),
                };
                let torus_i = traj.states[i]
                    .metric
                    .as_torus()
                    .expect("family is consistent along a trajectory");
                // Forward pass admissibility, re-checked for the f-equation.
                let bound =
                    cfl_bound(&traj.states[i].metric).expect("torus has a CFL bound");
                if dt > bound {
                    return Err(Error::StabilityViolation {
                        dt,
                        bound,
                        t: traj.states[i].t,
                    });
                }
                let half_metric =
                    advance_metric(&traj.states[i].metric, 0.5 * dt, s_opt, traj.states[i].t)?;
                let tf_lo = TorusFields::new(torus_i);
                let tf_half = TorusFields::new(
                    half_metric.as_torus().expect("torus stays a torus"),
                );
                let tf_hi = TorusFields::new(
                    traj.states[i + 1]
                        .metric
                        .as_torus()
                        .expect("family is consistent along a trajectory"),
                );
                let sv = s_opt.unwrap_or(0.0);
                let n = f.len();
                let stage = |base: &[f64], h: f64, k: &[f64]| -> Vec<f64> {
                    (0..n).map(|j| base[j] + h * k[j]).collect()
                };
                // RK4 with step -dt from t_{i+1} to t_i.
                let k1 = conjugate_rhs_torus(&tf_hi, &ops, &f, sv);
                let k2 = conjugate_rhs_torus(&tf_half, &ops, &stage(&f, -0.5 * dt, &k1), sv);
                let k3 = conjugate_rhs_torus(&tf_half, &ops, &stage(&f, -0.5 * dt, &k2), sv);
                let k4 = conjugate_rhs_torus(&tf_lo, &ops, &stage(&f, -dt, &k3), sv);
                for j in 0..n {
                    f[j] -= dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
                let field = GridField {
                    grid: t_last.grid(),
                    data: f.clone(),
                };
                if !field.all_finite() || field.linf() > F_SUP_CAP {
                    return Err(Error::BlowUp {
                        reason: format!("conjugate weight reached ‖f‖∞ = {:.3e}", field.linf()),
                        t: traj.states[i].t,
                    });
                }
                out[i] = Some(ScalarField::Grid(field));
            }
        }
        (Metric::Sphere(_), ScalarField::Const(c)) => {
            let mut f = *c;
            out[n_states - 1] = Some(ScalarField::Const(f));
            for i in (0..n_states - 1).rev() {
                let s_opt = match traj.flow_kind {
                    FlowKind::Ricci => None,
                    _ => Some(traj.s_samples[i]),
                };
                let sv = s_opt.unwrap_or(0.0);
                let r_of = |m: &Metric| m.as_sphere().expect("sphere").scalar_curvature_value();
                let half = advance_metric(&traj.states[i].metric, 0.5 * dt, s_opt, traj.states[i].t)?;
                let g = |m: &Metric| -r_of(m) + sv;
                // Constant-in-space reduction of the same backward RK4.
                let k1 = g(&traj.states[i + 1].metric);
                let k2 = g(&half);
                let k3 = g(&half);
                let k4 = g(&traj.states[i].metric);
                f -= dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                if !f.is_finite() || f.abs() > F_SUP_CAP {
                    return Err(Error::BlowUp {
                        reason: format!("conjugate weight reached {f:.3e}"),
                        t: traj.states[i].t,
                    });
                }
                out[i] = Some(ScalarField::Const(f));
            }
        }
        _ => {
            return Err(Error::GridMismatch(
                "terminal weight family does not match trajectory family".into(),
            ))
        }
    }

    Ok(out.into_iter().map(|f| f.expect("filled")).collect())
}

/// ∫ e^{-f} dμ for a state/weight pair; the conserved quantity of the
/// coupled system.
pub fn weighted_measure(m: &Metric, f: &ScalarField) -> Result<f64> {
    match (m, f) {
        (Metric::Torus(t), ScalarField::Grid(fg)) => {
            if fg.grid != t.grid() {
                return Err(Error::GridMismatch(
                    "weight grid does not match metric grid".into(),
                ));
            }
            let tf = TorusFields::new(t);
            let w: Vec<f64> = fg.data.iter().map(|&v| (-v).exp()).collect();
            Ok(cdot(&w, &tf.e2u) * tf.grid.cell_area())
        }
        (Metric::Sphere(s), ScalarField::Const(c)) => Ok((-c).exp() * s.volume()),
        _ => Err(Error::GridMismatch(
            "weight family does not match metric family".into(),
        )),
    }
}
