//! The one-to-one correspondence between Ricci flow and rescaled Ricci flow.
//!
//! Given an s-history along unrescaled time, the scale factor is
//! `φ(t) = 1 / (1 - (2/n) ∫₀ᵗ s dt)` and the reparameterized time is
//! `t̄ = ∫₀ᵗ φ dt`; then `ḡ(·, t̄) = φ(t) g(·, t)` solves the rescaled flow.
//! For constant nonzero s the module also fills `τ(t) = -2n/s + t`.
//!
//! The weight transforms as `f̄ = f + (n/2) ln φ`, the unique choice that
//! preserves the weighted measure `e^{-f} dμ` and makes
//! `F_k(g, f) = φ · F_k(ḡ, f̄)` an identity.

use crate::error::{Error, Result};
use crate::flow::{integrate, FlowKind, FlowState, SProvider, Trajectory};
use crate::geometry::{ConformalTorus, Metric, ScalarField};
use crate::grid::GridField;

/// Where a rescale map ran out of domain.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct MapTruncation {
    pub index: usize,
    pub t: f64,
    pub denominator: f64,
}

/// Sampled scale factor, reparameterized time, and (constant-s only) τ.
#[derive(Clone, Debug)]
pub struct RescaleMap {
    pub n: usize,
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
    pub t_bar: Vec<f64>,
    /// τ(tᵢ) = -2n/s + tᵢ, defined when s is a nonzero constant.
    pub tau: Option<Vec<f64>>,
    /// Set when the denominator 1 - (2/n)∫s dt reached zero before the end
    /// of the grid; the sampled arrays stop just before that point.
    pub truncation: Option<MapTruncation>,
}

/// Cumulative integral on a uniform grid, Simpson-based: classic composite
/// Simpson at even indices, the quadratic half-rule at odd ones. Fourth
/// order, and exact for constant and quadratic integrands.
pub fn cumulative_simpson(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * dt * (values[0] + values[1]);
        return out;
    }
    for i in 1..n {
        if i % 2 == 0 {
            out[i] = out[i - 2] + dt / 3.0 * (values[i - 2] + 4.0 * values[i - 1] + values[i]);
        } else if i + 1 < n {
            out[i] = out[i - 1] + dt / 12.0 * (5.0 * values[i - 1] + 8.0 * values[i] - values[i + 1]);
        } else {
            out[i] = out[i - 1] + dt / 12.0 * (-values[i - 2] + 8.0 * values[i - 1] + 5.0 * values[i]);
        }
    }
    out
}

/// Build the rescale map from an s-history sampled on a uniform time grid
/// starting at zero.
pub fn build_map(n: usize, s_history: &[f64], t_grid: &[f64]) -> Result<RescaleMap> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "dimension must be at least 2, got {n}"
        )));
    }
    if s_history.len() != t_grid.len() || t_grid.len() < 2 {
        return Err(Error::InvalidInput(
            "s-history and time grid must have equal length of at least 2".into(),
        ));
    }
    if t_grid[0].abs() > 1e-12 {
        return Err(Error::InvalidInput("time grid must start at 0".into()));
    }
    let dt = t_grid[1] - t_grid[0];
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidInput("time grid must be increasing".into()));
    }
    for (i, &t) in t_grid.iter().enumerate() {
        if (t - i as f64 * dt).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::InvalidInput("time grid must be uniform".into()));
        }
    }

    let integral = cumulative_simpson(s_history, dt);
    let two_over_n = 2.0 / n as f64;
    let mut keep = t_grid.len();
    let mut truncation = None;
    for (i, &int) in integral.iter().enumerate() {
        let denom = 1.0 - two_over_n * int;
        if denom <= 0.0 {
            keep = i;
            truncation = Some(MapTruncation {
                index: i,
                t: t_grid[i],
                denominator: denom,
            });
            break;
        }
    }
    if keep < 2 {
        let tr = truncation.expect("truncated below two samples");
        return Err(Error::DomainExhausted {
            t: tr.t,
            denominator: tr.denominator,
        });
    }

    let t: Vec<f64> = t_grid[..keep].to_vec();
    let s: Vec<f64> = s_history[..keep].to_vec();
    let phi: Vec<f64> = integral[..keep]
        .iter()
        .map(|&int| 1.0 / (1.0 - two_over_n * int))
        .collect();
    let t_bar = cumulative_simpson(&phi, dt);

    let s0 = s[0];
    let s_constant = s.iter().all(|&v| (v - s0).abs() <= 1e-12 * (1.0 + s0.abs()));
    let tau = if s_constant && s0 != 0.0 {
        Some(t.iter().map(|&ti| -2.0 * n as f64 / s0 + ti).collect())
    } else {
        None
    };

    Ok(RescaleMap {
        n,
        t,
        s,
        phi,
        t_bar,
        tau,
        truncation,
    })
}

impl RescaleMap {
    /// Error unless the map covers its whole input grid.
    pub fn require_full(&self) -> Result<()> {
        match &self.truncation {
            None => Ok(()),
            Some(tr) => Err(Error::DomainExhausted {
                t: tr.t,
                denominator: tr.denominator,
            }),
        }
    }
}

fn validate_phi(phi: f64) -> Result<()> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "scale factor must be positive and finite, got {phi}"
        )));
    }
    Ok(())
}

/// Homothety ḡ = φ g with the measure-preserving weight shift
/// f̄ = f + (n/2) ln φ.
pub fn to_rescaled(
    m: &Metric,
    f: Option<&ScalarField>,
    phi: f64,
) -> Result<(Metric, Option<ScalarField>)> {
    validate_phi(phi)?;
    let half_log = 0.5 * phi.ln();
    let metric = match m {
        Metric::Torus(t) => {
            let mut u = t.u().clone();
            for v in &mut u.data {
                *v += half_log;
            }
            Metric::Torus(ConformalTorus::new(u)?)
        }
        Metric::Sphere(s) => {
            Metric::Sphere(crate::geometry::RoundSphere::new(s.dim(), phi * s.r2())?)
        }
    };
    let shift = m.dim() as f64 * half_log; // (n/2) ln φ
    let weight = f.map(|field| match field {
        ScalarField::Grid(g) => ScalarField::Grid(GridField {
            grid: g.grid,
            data: g.data.iter().map(|&v| v + shift).collect(),
        }),
        ScalarField::Const(c) => ScalarField::Const(c + shift),
    });
    Ok((metric, weight))
}

/// Inverse of [`to_rescaled`].
pub fn from_rescaled(
    m: &Metric,
    f: Option<&ScalarField>,
    phi: f64,
) -> Result<(Metric, Option<ScalarField>)> {
    validate_phi(phi)?;
    to_rescaled(m, f, 1.0 / phi)
}

/// Map forward and back, reporting the worst componentwise error.
pub fn round_trip(m: &Metric, f: Option<&ScalarField>, phi: f64) -> Result<f64> {
    let (mb, fb) = to_rescaled(m, f, phi)?;
    let (m2, f2) = from_rescaled(&mb, fb.as_ref(), phi)?;
    let mut err: f64 = 0.0;
    match (m, &m2) {
        (Metric::Torus(a), Metric::Torus(b)) => {
            for (x, y) in a.u().data.iter().zip(&b.u().data) {
                err = err.max((x - y).abs());
            }
        }
        (Metric::Sphere(a), Metric::Sphere(b)) => {
            err = err.max((a.r2() - b.r2()).abs() / a.r2());
        }
        _ => unreachable!("family preserved by construction"),
    }
    match (f, &f2) {
        (Some(ScalarField::Grid(a)), Some(ScalarField::Grid(b))) => {
            for (x, y) in a.data.iter().zip(&b.data) {
                err = err.max((x - y).abs());
            }
        }
        (Some(ScalarField::Const(a)), Some(ScalarField::Const(b))) => {
            err = err.max((a - b).abs());
        }
        (None, None) => {}
        _ => unreachable!("weight shape preserved by construction"),
    }
    Ok(err)
}

/// Outcome of replaying a Ricci trajectory through the rescale map against a
/// directly integrated rescaled trajectory.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct CorrespondenceReport {
    /// max over compared states and nodes of the relative metric discrepancy.
    pub max_metric_rel_error: f64,
    pub states_compared: usize,
    pub t_bar_end: f64,
}

/// Cubic Lagrange weights for target x over 4 sample abscissae.
fn lagrange4(xs: &[f64; 4], x: f64) -> [f64; 4] {
    let mut w = [0.0; 4];
    for k in 0..4 {
        let mut prod = 1.0;
        for l in 0..4 {
            if l != k {
                prod *= (x - xs[l]) / (xs[k] - xs[l]);
            }
        }
        w[k] = prod;
    }
    w
}

/// Maps each state of a plain-Ricci trajectory through (φ, t̄), resamples on
/// the rescaled run's uniform t̄ grid (cubic in t̄), and reports the worst
/// relative metric discrepancy against a direct rescaled-flow run started
/// from the same initial metric.
pub fn correspondence_check(
    ricci_traj: &Trajectory,
    s_const: f64,
    dt_bar: f64,
) -> Result<CorrespondenceReport> {
    if ricci_traj.flow_kind != FlowKind::Ricci {
        return Err(Error::InvalidInput(
            "correspondence check expects a plain Ricci-flow trajectory".into(),
        ));
    }
    if let Some(tr) = &ricci_traj.truncation {
        return Err(Error::InvalidInput(format!(
            "trajectory truncated at t = {:.6} ({})",
            tr.t, tr.reason
        )));
    }
    if ricci_traj.states.len() < 4 {
        return Err(Error::InvalidInput(
            "need at least 4 states for cubic resampling".into(),
        ));
    }
    let n = ricci_traj.states[0].metric.dim();
    let times = ricci_traj.times();
    let s_hist = vec![s_const; times.len()];
    let map = build_map(n, &s_hist, &times)?;
    map.require_full()?;

    let t_bar_end = *map.t_bar.last().expect("non-empty");
    let initial = FlowState::new(ricci_traj.states[0].metric.clone());
    let direct = integrate(
        &initial,
        t_bar_end,
        dt_bar,
        FlowKind::Rescaled,
        &SProvider::Constant(s_const),
    )?;
    if let Some(tr) = &direct.truncation {
        return Err(Error::InvalidInput(format!(
            "direct rescaled run truncated at t̄ = {:.6} ({})",
            tr.t, tr.reason
        )));
    }

    let mapped: Vec<Metric> = ricci_traj
        .states
        .iter()
        .zip(&map.phi)
        .map(|(st, &phi)| to_rescaled(&st.metric, None, phi).map(|(m, _)| m))
        .collect::<Result<_>>()?;

    let mut max_err: f64 = 0.0;
    let mut compared = 0usize;
    for st in &direct.states {
        let tb = st.t;
        if tb > t_bar_end + 1e-12 {
            break;
        }
        // Stencil around tb in the (increasing, mildly nonuniform) t̄ array.
        let pos = map.t_bar.partition_point(|&v| v < tb);
        let lo = pos.saturating_sub(2).min(map.t_bar.len() - 4);
        let xs = [
            map.t_bar[lo],
            map.t_bar[lo + 1],
            map.t_bar[lo + 2],
            map.t_bar[lo + 3],
        ];
        let w = lagrange4(&xs, tb);
        match &st.metric {
            Metric::Torus(direct_t) => {
                let grids: [&Vec<f64>; 4] = [
                    &mapped[lo].as_torus().expect("torus").u().data,
                    &mapped[lo + 1].as_torus().expect("torus").u().data,
                    &mapped[lo + 2].as_torus().expect("torus").u().data,
                    &mapped[lo + 3].as_torus().expect("torus").u().data,
                ];
                for (node, &ud) in direct_t.u().data.iter().enumerate() {
                    let um = w[0] * grids[0][node]
                        + w[1] * grids[1][node]
                        + w[2] * grids[2][node]
                        + w[3] * grids[3][node];
                    // g ∝ e^{2u}, so the relative metric error is |e^{2Δu} - 1|.
                    max_err = max_err.max((2.0 * (um - ud)).exp_m1().abs());
                }
            }
            Metric::Sphere(direct_s) => {
                let rm = (0..4).fold(0.0, |acc, k| {
                    acc + w[k] * mapped[lo + k].as_sphere().expect("sphere").r2()
                });
                max_err = max_err.max((rm / direct_s.r2() - 1.0).abs());
            }
        }
        compared += 1;
    }

    Ok(CorrespondenceReport {
        max_metric_rel_error: max_err,
        states_compared: compared,
        t_bar_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{volume, RoundSphere};
    use crate::grid::Grid;
    use crate::rng::{random_trig_field, SeedSplitter};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn uniform_grid(t_end: f64, dt: f64) -> Vec<f64> {
        let n = (t_end / dt).round() as usize;
        (0..=n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn zero_s_gives_identity_map() {
        let t = uniform_grid(1.0, 0.01);
        let s = vec![0.0; t.len()];
        let map = build_map(2, &s, &t).unwrap();
        assert!(map.truncation.is_none());
        assert!(map.tau.is_none());
        for (i, (&phi, &tb)) in map.phi.iter().zip(&map.t_bar).enumerate() {
            assert_abs_diff_eq!(phi, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(tb, map.t[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_negative_s_reproduces_closed_forms() {
        // s ≡ -1, n = 2: φ = 1/(1+t), t̄ = ln(1+t), τ = 4 + t.
        let dt = 1e-3;
        let t = uniform_grid(0.5, dt);
        let s = vec![-1.0; t.len()];
        let map = build_map(2, &s, &t).unwrap();
        assert_abs_diff_eq!(map.phi[0], 1.0);
        assert_abs_diff_eq!(map.t_bar[0], 0.0);
        let tau = map.tau.as_ref().expect("constant nonzero s");
        for i in 0..t.len() {
            let ti = t[i];
            assert!((map.phi[i] - 1.0 / (1.0 + ti)).abs() < 1e-10);
            assert!((map.t_bar[i] - (1.0 + ti).ln()).abs() < 1e-10);
            assert!((tau[i] - (4.0 + ti)).abs() < 1e-13);
        }
        // dt̄/dt = φ > 0: forward differences strictly positive.
        for w in map.t_bar.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn positive_s_exhausts_the_domain() {
        // s ≡ +1, n = 2: denominator 1 - t vanishes at t = 1.
        let dt = 1e-3;
        let t = uniform_grid(1.5, dt);
        let s = vec![1.0; t.len()];
        let map = build_map(2, &s, &t).unwrap();
        let tr = map.truncation.expect("must truncate");
        assert!((tr.t - 1.0).abs() <= dt + 1e-12, "truncated at {}", tr.t);
        assert!(map.require_full().is_err());
    }

    #[test]
    fn homothety_scales_sphere_quantities() {
        let s = RoundSphere::new(2, 1.5).unwrap();
        let m = Metric::Sphere(s);
        let (mb, _) = to_rescaled(&m, None, 4.0).unwrap();
        let sb = mb.as_sphere().unwrap();
        assert_abs_diff_eq!(sb.r2(), 6.0);
        assert_abs_diff_eq!(
            sb.scalar_curvature_value(),
            s.scalar_curvature_value() / 4.0
        );
        assert_abs_diff_eq!(volume(&mb), 4.0 * volume(&m), epsilon = 1e-10);
        // φ = 1 is the identity.
        let (mi, _) = to_rescaled(&m, None, 1.0).unwrap();
        assert_eq!(mi.as_sphere().unwrap().r2(), 1.5);
    }

    #[test]
    fn round_trip_errors_stay_at_rounding_level() {
        let grid = Grid::new(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let splitter = SeedSplitter::new(31);
        let u = random_trig_field(&mut splitter.stream("u"), grid, 3, 0.5);
        let f = random_trig_field(&mut splitter.stream("f"), grid, 3, 0.8);
        let m = Metric::Torus(ConformalTorus::new(u).unwrap());
        let f = ScalarField::Grid(f);
        assert_eq!(round_trip(&m, Some(&f), 1.0).unwrap(), 0.0);
        assert!(round_trip(&m, Some(&f), 7.3).unwrap() <= 1e-13);
        // Conditioning check at tiny φ.
        assert!(round_trip(&m, Some(&f), 1e-6).unwrap() <= 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_is_inverse_for_random_inputs(
            seed in 0u64..1_000_000,
            phi in 1e-4f64..1e4,
            amp in 0.0f64..0.8,
        ) {
            let grid = Grid::new(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
            let splitter = SeedSplitter::new(seed);
            let u = random_trig_field(&mut splitter.stream("u"), grid, 2, amp);
            let m = Metric::Torus(ConformalTorus::new(u).unwrap());
            let err = round_trip(&m, None, phi).unwrap();
            prop_assert!(err <= 1e-11, "round-trip error {err:.3e} at phi {phi}");
        }
    }

    #[test]
    fn correspondence_is_exact_bookkeeping_on_flat_torus() {
        let grid = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let initial = FlowState::new(Metric::Torus(
            crate::geometry::ConformalTorus::flat(grid).unwrap(),
        ));
        let dt = 0.5 * crate::flow::cfl_bound(&initial.metric).unwrap();
        let traj = integrate(&initial, 40.0 * dt, dt, FlowKind::Ricci, &SProvider::Constant(0.0))
            .unwrap();
        let report = correspondence_check(&traj, -1.0, dt).unwrap();
        assert!(
            report.max_metric_rel_error <= 1e-8,
            "flat homothety discrepancy {:.3e}",
            report.max_metric_rel_error
        );
    }

    #[test]
    fn correspondence_on_sphere_scalar_ode() {
        let initial = FlowState::new(Metric::Sphere(RoundSphere::new(2, 1.0).unwrap()));
        let traj = integrate(&initial, 0.3, 1e-3, FlowKind::Ricci, &SProvider::Constant(0.0))
            .unwrap();
        let report = correspondence_check(&traj, -2.0, 1e-3).unwrap();
        assert!(
            report.max_metric_rel_error <= 1e-6,
            "sphere discrepancy {:.3e}",
            report.max_metric_rel_error
        );
        assert!(report.states_compared > 100);
    }
}
