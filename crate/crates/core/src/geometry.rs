//! Compact Riemannian metrics in two concrete families, with curvature,
//! measure, and differential operators.
//!
//! * [`ConformalTorus`]: `g = e^{2u}(dx² + dy²)` on a flat periodic square,
//!   with all curvature carried by the log-conformal factor `u`. In 2D the
//!   conformal identities collapse the operators to flat ones:
//!   `R = -2 e^{-2u} Δ₀u`, `Δ_g f = e^{-2u} Δ₀ f`,
//!   `|∇f|²_g = e^{-2u} |∇₀f|²`, `dμ = e^{2u} dx dy`.
//! * [`RoundSphere`]: the closed-form family with `R = n(n-1)/r²`,
//!   `Ric = ((n-1)/r²) g`, used as an exact oracle. Scalar fields on it are
//!   spatially constant.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField, SpectralOps};
use crate::sum::{cdot, csum};

/// Cap on ‖u‖∞; e^{±2u} overflow guard far beyond meaningful runs.
pub const U_SUP_CAP: f64 = 20.0;

/// Conformal metric `e^{2u}(dx² + dy²)` on the flat torus.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConformalTorus {
    u: GridField,
}

impl ConformalTorus {
    pub fn new(u: GridField) -> Result<Self> {
        if u.grid.nx < 8 || u.grid.ny < 8 {
            return Err(Error::InvalidInput(format!(
                "torus grid must be at least 8x8, got {}x{}",
                u.grid.nx, u.grid.ny
            )));
        }
        if !u.all_finite() {
            return Err(Error::InvalidInput(
                "conformal factor contains non-finite values".into(),
            ));
        }
        Ok(Self { u })
    }

    pub fn flat(grid: Grid) -> Result<Self> {
        Self::new(GridField::zeros(grid))
    }

    pub fn grid(&self) -> Grid {
        self.u.grid
    }

    pub fn u(&self) -> &GridField {
        &self.u
    }
}

/// Round sphere of dimension `n ≥ 2` with squared radius `r2`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundSphere {
    dim: usize,
    r2: f64,
}

impl RoundSphere {
    pub fn new(dim: usize, r2: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidInput(format!(
                "sphere dimension must be at least 2, got {dim}"
            )));
        }
        if !(r2 > 0.0 && r2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "squared radius must be positive and finite, got {r2}"
            )));
        }
        Ok(Self { dim, r2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn r2(&self) -> f64 {
        self.r2
    }

    /// R = n(n-1)/r².
    pub fn scalar_curvature_value(&self) -> f64 {
        (self.dim * (self.dim - 1)) as f64 / self.r2
    }

    /// Ric = c·g with c = (n-1)/r².
    pub fn ricci_coefficient(&self) -> f64 {
        (self.dim - 1) as f64 / self.r2
    }

    pub fn volume(&self) -> f64 {
        unit_sphere_area(self.dim) * self.r2.powf(self.dim as f64 / 2.0)
    }
}

/// Surface area of the unit n-sphere: 2 π^{(n+1)/2} / Γ((n+1)/2).
pub fn unit_sphere_area(n: usize) -> f64 {
    let pi = std::f64::consts::PI;
    // Γ((n+1)/2) at integer or half-integer argument.
    let gamma = if n % 2 == 1 {
        // (n+1)/2 integer m: Γ(m) = (m-1)!
        let m = n.div_ceil(2);
        (1..m).map(|i| i as f64).product::<f64>()
    } else {
        // (n+1)/2 = m + 1/2 with m = n/2: Γ(m + 1/2) = (2m)! √π / (4^m m!)
        let m = n / 2;
        let fact2m: f64 = (1..=2 * m).map(|i| i as f64).product();
        let factm: f64 = (1..=m).map(|i| i as f64).product();
        fact2m * pi.sqrt() / (4.0_f64.powi(m as i32) * factm)
    };
    2.0 * pi.powf((n as f64 + 1.0) / 2.0) / gamma
}

/// A compact metric from one of the two supported families.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Metric {
    Torus(ConformalTorus),
    Sphere(RoundSphere),
}

impl Metric {
    pub fn dim(&self) -> usize {
        match self {
            Metric::Torus(_) => 2,
            Metric::Sphere(s) => s.dim(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Metric::Torus(_) => "torus",
            Metric::Sphere(_) => "sphere",
        }
    }

    pub fn as_torus(&self) -> Option<&ConformalTorus> {
        match self {
            Metric::Torus(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_sphere(&self) -> Option<&RoundSphere> {
        match self {
            Metric::Sphere(s) => Some(s),
            _ => None,
        }
    }
}

/// Scalar field over a metric: a grid of samples on the torus, a constant on
/// the sphere (where all supported fields are homogeneous).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ScalarField {
    Grid(GridField),
    Const(f64),
}

impl ScalarField {
    pub fn all_finite(&self) -> bool {
        match self {
            ScalarField::Grid(g) => g.all_finite(),
            ScalarField::Const(c) => c.is_finite(),
        }
    }

    pub fn as_grid(&self) -> Option<&GridField> {
        match self {
            ScalarField::Grid(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            ScalarField::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn linf(&self) -> f64 {
        match self {
            ScalarField::Grid(g) => g.linf(),
            ScalarField::Const(c) => c.abs(),
        }
    }
}

/// Symmetric 2-tensor field: component grids (xx, xy, yy) on the torus, a
/// multiple of the metric on the sphere.
#[derive(Clone, Debug, PartialEq)]
pub enum SymTensorField {
    Grid {
        xx: GridField,
        xy: GridField,
        yy: GridField,
    },
    /// c·g for the closed-form family.
    MetricMultiple(f64),
}

/// Per-metric derived quantities used throughout flows and functionals.
/// Everything is a flat row-major vector aligned with the torus grid.
pub(crate) struct TorusFields {
    pub grid: Grid,
    pub e2u: Vec<f64>,
    pub em2u: Vec<f64>,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    /// Scalar curvature R = -2 e^{-2u} Δ₀u.
    pub r: Vec<f64>,
    /// Curvature density R e^{2u} = -2 Δ₀u (the flat-measure potential).
    pub r_flat: Vec<f64>,
}

impl TorusFields {
    pub fn new(t: &ConformalTorus) -> Self {
        let grid = t.grid();
        let ops = SpectralOps::new(grid);
        let (lap_u, ux, uy) = ops.lap_and_grad(&t.u().data);
        let e2u: Vec<f64> = t.u().data.iter().map(|&u| (2.0 * u).exp()).collect();
        let em2u: Vec<f64> = t.u().data.iter().map(|&u| (-2.0 * u).exp()).collect();
        let r: Vec<f64> = lap_u
            .iter()
            .zip(&em2u)
            .map(|(&l, &e)| -2.0 * e * l)
            .collect();
        let r_flat: Vec<f64> = lap_u.iter().map(|&l| -2.0 * l).collect();
        Self {
            grid,
            e2u,
            em2u,
            ux,
            uy,
            r,
            r_flat,
        }
    }

    /// ∫ R dμ = Σ (-2 Δ₀u) hx hy; exactly zero analytically (Gauss–Bonnet).
    pub fn total_scalar_curvature(&self) -> f64 {
        csum(self.r_flat.iter().copied()) * self.grid.cell_area()
    }

    pub fn volume(&self) -> f64 {
        csum(self.e2u.iter().copied()) * self.grid.cell_area()
    }
}

fn expect_torus_grid<'f>(t: &ConformalTorus, f: &'f ScalarField) -> Result<&'f GridField> {
    match f {
        ScalarField::Grid(g) if g.grid == t.grid() => Ok(g),
        ScalarField::Grid(g) => Err(Error::GridMismatch(format!(
            "field grid {}x{} does not match metric grid {}x{}",
            g.grid.nx,
            g.grid.ny,
            t.grid().nx,
            t.grid().ny
        ))),
        ScalarField::Const(_) => Err(Error::GridMismatch(
            "constant field passed where a torus grid field is required; \
             sample it on the metric grid first"
                .into(),
        )),
    }
}

fn expect_sphere_const(f: &ScalarField) -> Result<f64> {
    match f {
        ScalarField::Const(c) => Ok(*c),
        ScalarField::Grid(_) => Err(Error::GridMismatch(
            "grid field passed for a round sphere; sphere fields are constants".into(),
        )),
    }
}

/// Scalar curvature R as a field.
pub fn scalar_curvature(m: &Metric) -> ScalarField {
    match m {
        Metric::Torus(t) => {
            let tf = TorusFields::new(t);
            ScalarField::Grid(GridField {
                grid: tf.grid,
                data: tf.r,
            })
        }
        Metric::Sphere(s) => ScalarField::Const(s.scalar_curvature_value()),
    }
}

/// Ricci tensor; in 2D this is (R/2)·g, on the sphere ((n-1)/r²)·g.
pub fn ricci(m: &Metric) -> SymTensorField {
    match m {
        Metric::Torus(t) => {
            let tf = TorusFields::new(t);
            let grid = tf.grid;
            let diag: Vec<f64> = tf
                .r
                .iter()
                .zip(&tf.e2u)
                .map(|(&r, &e)| 0.5 * r * e)
                .collect();
            SymTensorField::Grid {
                xx: GridField {
                    grid,
                    data: diag.clone(),
                },
                xy: GridField::zeros(grid),
                yy: GridField { grid, data: diag },
            }
        }
        Metric::Sphere(s) => SymTensorField::MetricMultiple(s.ricci_coefficient()),
    }
}

/// Laplace–Beltrami operator Δ_g f.
pub fn laplace_beltrami(m: &Metric, f: &ScalarField) -> Result<ScalarField> {
    match m {
        Metric::Torus(t) => {
            let g = expect_torus_grid(t, f)?;
            let tf = TorusFields::new(t);
            let ops = SpectralOps::new(tf.grid);
            let lap = ops.laplacian(&g.data);
            let data: Vec<f64> = lap.iter().zip(&tf.em2u).map(|(&l, &e)| e * l).collect();
            Ok(ScalarField::Grid(GridField {
                grid: tf.grid,
                data,
            }))
        }
        Metric::Sphere(_) => {
            expect_sphere_const(f)?;
            Ok(ScalarField::Const(0.0))
        }
    }
}

/// Pointwise |∇f|²_g = e^{-2u}|∇₀f|² on the torus.
pub fn gradient_norm_sq(m: &Metric, f: &ScalarField) -> Result<ScalarField> {
    match m {
        Metric::Torus(t) => {
            let g = expect_torus_grid(t, f)?;
            let tf = TorusFields::new(t);
            let ops = SpectralOps::new(tf.grid);
            let (fx, fy) = ops.grad(&g.data);
            let data: Vec<f64> = (0..tf.grid.node_count())
                .map(|i| tf.em2u[i] * (fx[i] * fx[i] + fy[i] * fy[i]))
                .collect();
            Ok(ScalarField::Grid(GridField {
                grid: tf.grid,
                data,
            }))
        }
        Metric::Sphere(_) => {
            expect_sphere_const(f)?;
            Ok(ScalarField::Const(0.0))
        }
    }
}

/// Covariant Hessian ∇_i∇_j f. On the conformal torus the Christoffel terms
/// reduce to first derivatives of u:
/// H_xx = f_xx - u_x f_x + u_y f_y,
/// H_xy = f_xy - u_y f_x - u_x f_y,
/// H_yy = f_yy + u_x f_x - u_y f_y.
pub fn hessian(m: &Metric, f: &ScalarField) -> Result<SymTensorField> {
    match m {
        Metric::Torus(t) => {
            let g = expect_torus_grid(t, f)?;
            let tf = TorusFields::new(t);
            let ops = SpectralOps::new(tf.grid);
            let (fx, fy) = ops.grad(&g.data);
            let fxx = ops.dxx(&g.data);
            let fyy = ops.dyy(&g.data);
            let fxy = ops.dxy(&g.data);
            let n = tf.grid.node_count();
            let mut xx = Vec::with_capacity(n);
            let mut xy = Vec::with_capacity(n);
            let mut yy = Vec::with_capacity(n);
            for i in 0..n {
                xx.push(fxx[i] - tf.ux[i] * fx[i] + tf.uy[i] * fy[i]);
                xy.push(fxy[i] - tf.uy[i] * fx[i] - tf.ux[i] * fy[i]);
                yy.push(fyy[i] + tf.ux[i] * fx[i] - tf.uy[i] * fy[i]);
            }
            let grid = tf.grid;
            Ok(SymTensorField::Grid {
                xx: GridField { grid, data: xx },
                xy: GridField { grid, data: xy },
                yy: GridField { grid, data: yy },
            })
        }
        Metric::Sphere(_) => {
            expect_sphere_const(f)?;
            Ok(SymTensorField::MetricMultiple(0.0))
        }
    }
}

/// Measure weight per node: e^{2u}·hx·hy on the torus, the full volume on
/// the sphere (a single homogeneous "node").
pub fn measure_weight(m: &Metric) -> ScalarField {
    match m {
        Metric::Torus(t) => {
            let tf = TorusFields::new(t);
            let a = tf.grid.cell_area();
            let data: Vec<f64> = tf.e2u.iter().map(|&e| e * a).collect();
            ScalarField::Grid(GridField {
                grid: tf.grid,
                data,
            })
        }
        Metric::Sphere(s) => ScalarField::Const(s.volume()),
    }
}

/// Total volume V = ∫ dμ.
pub fn volume(m: &Metric) -> f64 {
    match m {
        Metric::Torus(t) => TorusFields::new(t).volume(),
        Metric::Sphere(s) => s.volume(),
    }
}

/// ∫ f dμ.
pub fn integrate(m: &Metric, f: &ScalarField) -> Result<f64> {
    match (m, f) {
        (Metric::Torus(t), _) => {
            let g = expect_torus_grid(t, f)?;
            let tf = TorusFields::new(t);
            Ok(cdot(&g.data, &tf.e2u) * tf.grid.cell_area())
        }
        (Metric::Sphere(s), _) => Ok(expect_sphere_const(f)? * s.volume()),
    }
}

/// Average scalar curvature ∫R dμ / V; zero to rounding on any torus.
pub fn average_scalar_curvature(m: &Metric) -> f64 {
    match m {
        Metric::Torus(t) => {
            let tf = TorusFields::new(t);
            tf.total_scalar_curvature() / tf.volume()
        }
        Metric::Sphere(s) => s.scalar_curvature_value(),
    }
}

/// Deterministic sinusoidal conformal factor used for initial data:
/// a weighted sum of product sinusoids over the given mode pairs, with fixed
/// phases, scaled so the weights sum to `amplitude`.
pub fn sinusoid_u(grid: Grid, amplitude: f64, modes: &[(i64, i64)]) -> GridField {
    if modes.is_empty() || amplitude == 0.0 {
        return GridField::zeros(grid);
    }
    let weights: Vec<f64> = (0..modes.len()).map(|j| 0.5_f64.powi(j as i32)).collect();
    let wsum: f64 = weights.iter().sum();
    GridField::from_fn(grid, |x, y| {
        let mut v = 0.0;
        for (j, &(mx, my)) in modes.iter().enumerate() {
            let px = 0.37 + 0.61 * j as f64;
            let py = 1.13 + 0.41 * j as f64;
            v += weights[j]
                * (std::f64::consts::TAU * mx as f64 * x / grid.lx + px).sin()
                * (std::f64::consts::TAU * my as f64 * y / grid.ly + py).sin();
        }
        amplitude * v / wsum
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{random_trig_field, SeedSplitter};
    use crate::sum::cdot3;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn torus_grid(n: usize) -> Grid {
        Grid::new(n, n, 2.0 * PI, 2.0 * PI).unwrap()
    }

    /// Independent high-order finite-difference oracle for Δ₀ on a periodic
    /// grid (8th-order central stencil), used to cross-check the spectral
    /// route for R.
    fn fd8_laplacian(f: &GridField) -> Vec<f64> {
        let g = f.grid;
        let (nx, ny) = (g.nx, g.ny);
        let c = [
            -205.0 / 72.0,
            8.0 / 5.0,
            -1.0 / 5.0,
            8.0 / 315.0,
            -1.0 / 560.0,
        ];
        let (hx2, hy2) = (g.hx() * g.hx(), g.hy() * g.hy());
        let mut out = vec![0.0; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                let mut dxx = c[0] * f.data[g.idx(i, j)];
                let mut dyy = dxx;
                for (off, &ck) in c.iter().enumerate().skip(1) {
                    let ip = (i + off) % nx;
                    let im = (i + nx - off % nx) % nx;
                    let jp = (j + off) % ny;
                    let jm = (j + ny - off % ny) % ny;
                    dxx += ck * (f.data[g.idx(ip, j)] + f.data[g.idx(im, j)]);
                    dyy += ck * (f.data[g.idx(i, jp)] + f.data[g.idx(i, jm)]);
                }
                out[g.idx(i, j)] = dxx / hx2 + dyy / hy2;
            }
        }
        out
    }

    #[test]
    fn flat_torus_is_scalar_flat() {
        let m = Metric::Torus(ConformalTorus::flat(torus_grid(16)).unwrap());
        match scalar_curvature(&m) {
            ScalarField::Grid(r) => assert!(r.linf() < 1e-13),
            _ => panic!("expected grid field"),
        }
    }

    #[test]
    fn sphere_closed_forms() {
        let s = RoundSphere::new(2, 1.0).unwrap();
        assert_abs_diff_eq!(s.scalar_curvature_value(), 2.0);
        assert_abs_diff_eq!(s.volume(), 4.0 * PI, epsilon = 1e-12);
        // n(n-1) = scalar_curvature · r2 exactly.
        let s2 = RoundSphere::new(5, 3.7).unwrap();
        assert_abs_diff_eq!(s2.scalar_curvature_value() * s2.r2(), 20.0);
        // Ric = ((n-1)/r2) g.
        let s3 = RoundSphere::new(3, 4.0).unwrap();
        match ricci(&Metric::Sphere(s3)) {
            SymTensorField::MetricMultiple(c) => assert_abs_diff_eq!(c, 0.5),
            _ => panic!("expected metric multiple"),
        }
        assert_abs_diff_eq!(unit_sphere_area(3), 2.0 * PI * PI, epsilon = 1e-12);
    }

    #[test]
    fn scalar_curvature_matches_high_order_fd_oracle() {
        // R at each node vs -2 e^{-2u} Δ₀u with Δ₀ from an independent
        // 8th-order stencil.
        let grid = Grid::new(256, 256, 2.0 * PI, 2.0 * PI).unwrap();
        let u = GridField::from_fn(grid, |x, _| 0.1 * x.sin());
        let torus = ConformalTorus::new(u.clone()).unwrap();
        let r = match scalar_curvature(&Metric::Torus(torus)) {
            ScalarField::Grid(r) => r,
            _ => unreachable!(),
        };
        let lap_fd = fd8_laplacian(&u);
        let mut max_rel = 0.0_f64;
        let scale = r.linf();
        for i in 0..grid.node_count() {
            let oracle = -2.0 * (-2.0 * u.data[i]).exp() * lap_fd[i];
            max_rel = max_rel.max((r.data[i] - oracle).abs() / scale);
        }
        assert!(max_rel < 1e-6, "max relative deviation {max_rel:.3e}");
    }

    #[test]
    fn two_dimensional_identity_ric_equals_half_r_g() {
        let grid = torus_grid(32);
        let splitter = SeedSplitter::new(11);
        let u = random_trig_field(&mut splitter.stream("u"), grid, 3, 0.4);
        let t = ConformalTorus::new(u).unwrap();
        let m = Metric::Torus(t.clone());
        let r = match scalar_curvature(&m) {
            ScalarField::Grid(r) => r,
            _ => unreachable!(),
        };
        let e2u: Vec<f64> = t.u().data.iter().map(|&v| (2.0 * v).exp()).collect();
        match ricci(&m) {
            SymTensorField::Grid { xx, xy, yy } => {
                for i in 0..grid.node_count() {
                    let want = 0.5 * r.data[i] * e2u[i];
                    assert_abs_diff_eq!(xx.data[i], want, epsilon = 1e-12 * (1.0 + want.abs()));
                    assert_abs_diff_eq!(yy.data[i], want, epsilon = 1e-12 * (1.0 + want.abs()));
                    assert_eq!(xy.data[i], 0.0);
                }
            }
            _ => panic!("expected grid tensor"),
        }
    }

    #[test]
    fn laplace_beltrami_flat_fourier_mode() {
        let grid = Grid::new(64, 64, 1.0, 1.0).unwrap();
        let m = Metric::Torus(ConformalTorus::flat(grid).unwrap());
        let f = ScalarField::Grid(GridField::from_fn(grid, |x, _| (2.0 * PI * x).sin()));
        let lap = laplace_beltrami(&m, &f).unwrap();
        let want = -(2.0 * PI) * (2.0 * PI);
        match (lap, &f) {
            (ScalarField::Grid(l), ScalarField::Grid(fg)) => {
                for i in 0..grid.node_count() {
                    assert_abs_diff_eq!(l.data[i], want * fg.data[i], epsilon = 1e-9);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn laplacian_integrates_to_zero_against_flat_measure() {
        // ∫ (Δ_g f) e^{2u} dx dy = 0 on a closed manifold.
        let grid = torus_grid(32);
        let splitter = SeedSplitter::new(3);
        let u = random_trig_field(&mut splitter.stream("u"), grid, 2, 0.5);
        let t = ConformalTorus::new(u).unwrap();
        let f = random_trig_field(&mut splitter.stream("f"), grid, 3, 1.0);
        let m = Metric::Torus(t);
        let lap = laplace_beltrami(&m, &ScalarField::Grid(f)).unwrap();
        let total = integrate(&m, &lap).unwrap();
        assert!(total.abs() < 1e-12 * (1.0 + lap.linf()));
    }

    #[test]
    fn gradient_and_hessian_flat_closed_forms() {
        let grid = Grid::new(64, 64, 1.0, 1.0).unwrap();
        let m = Metric::Torus(ConformalTorus::flat(grid).unwrap());
        let w = 2.0 * PI;
        let f = ScalarField::Grid(GridField::from_fn(grid, |x, _| (w * x).sin()));
        match gradient_norm_sq(&m, &f).unwrap() {
            ScalarField::Grid(g) => {
                for i in 0..grid.nx {
                    for j in 0..grid.ny {
                        let x = grid.x(i);
                        let want = w * w * (w * x).cos() * (w * x).cos();
                        assert_abs_diff_eq!(g.data[grid.idx(i, j)], want, epsilon = 1e-9);
                    }
                }
            }
            _ => unreachable!(),
        }
        match hessian(&m, &f).unwrap() {
            SymTensorField::Grid { xx, xy, yy } => {
                for i in 0..grid.nx {
                    let x = grid.x(i);
                    let want = -w * w * (w * x).sin();
                    assert_abs_diff_eq!(xx.data[grid.idx(i, 0)], want, epsilon = 1e-8);
                    assert_abs_diff_eq!(xy.data[grid.idx(i, 0)], 0.0, epsilon = 1e-10);
                    assert_abs_diff_eq!(yy.data[grid.idx(i, 0)], 0.0, epsilon = 1e-10);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn hessian_trace_equals_laplacian() {
        // g^{ij}∇_i∇_j f - Δ_g f vanishes identically: the Christoffel terms
        // cancel exactly node by node.
        let grid = torus_grid(32);
        let splitter = SeedSplitter::new(5);
        let u = random_trig_field(&mut splitter.stream("u"), grid, 3, 0.45);
        let f = random_trig_field(&mut splitter.stream("f"), grid, 3, 1.2);
        let t = ConformalTorus::new(u.clone()).unwrap();
        let m = Metric::Torus(t);
        let h = hessian(&m, &ScalarField::Grid(f.clone())).unwrap();
        let lap = laplace_beltrami(&m, &ScalarField::Grid(f.clone())).unwrap();
        let scale = 1.0 + lap.linf();
        match (h, lap) {
            (SymTensorField::Grid { xx, yy, .. }, ScalarField::Grid(l)) => {
                for i in 0..grid.node_count() {
                    let em2u = (-2.0 * u.data[i]).exp();
                    let trace = em2u * (xx.data[i] + yy.data[i]);
                    assert!(
                        (trace - l.data[i]).abs() <= 1e-10 * scale,
                        "trace deviation {} at node {i}",
                        (trace - l.data[i]).abs()
                    );
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn integration_by_parts_holds_to_rounding() {
        // ∫(Δ_g f) φ dμ + ∫⟨∇f, ∇φ⟩_g dμ = 0.
        let grid = torus_grid(48);
        let splitter = SeedSplitter::new(9);
        let u = random_trig_field(&mut splitter.stream("u"), grid, 3, 0.4);
        let f = random_trig_field(&mut splitter.stream("f"), grid, 4, 0.8);
        let phi = random_trig_field(&mut splitter.stream("phi"), grid, 4, 0.9);
        let t = ConformalTorus::new(u).unwrap();
        let tf = TorusFields::new(&t);
        let ops = SpectralOps::new(grid);
        let lap_f = ops.laplacian(&f.data);
        let (fx, fy) = ops.grad(&f.data);
        let (px, py) = ops.grad(&phi.data);
        // Both integrands reduce to flat densities: the conformal weights
        // cancel against dμ.
        let lhs = cdot(&lap_f, &phi.data) * grid.cell_area();
        let dots: Vec<f64> = (0..grid.node_count())
            .map(|i| fx[i] * px[i] + fy[i] * py[i])
            .collect();
        let rhs = csum(dots.iter().copied()) * grid.cell_area();
        let scale: f64 = cdot3(&fx, &px, &tf.e2u).abs().max(1.0);
        assert!(
            (lhs + rhs).abs() <= 1e-10 * scale,
            "ibp defect {:.3e}",
            (lhs + rhs).abs()
        );
    }

    #[test]
    fn gauss_bonnet_on_torus() {
        let grid = torus_grid(40);
        let splitter = SeedSplitter::new(21);
        let u = random_trig_field(&mut splitter.stream("u"), grid, 3, 0.6);
        let t = ConformalTorus::new(u).unwrap();
        let tf = TorusFields::new(&t);
        let total = tf.total_scalar_curvature();
        let r_linf = tf.r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-8 * (r_linf * tf.volume()).max(1.0);
        assert!(total.abs() <= tol, "∫R dμ = {total:.3e}");
    }

    #[test]
    fn torus_volume_and_sphere_volume() {
        let grid = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let m = Metric::Torus(ConformalTorus::flat(grid).unwrap());
        assert_abs_diff_eq!(volume(&m), 1.0, epsilon = 1e-14);
        for r2 in [0.5, 1.0, 4.0] {
            let s = Metric::Sphere(RoundSphere::new(2, r2).unwrap());
            assert_abs_diff_eq!(volume(&s), 4.0 * PI * r2, epsilon = 1e-10 * r2);
        }
    }

    #[test]
    fn operator_convergence_order_on_finitely_smooth_profile() {
        // |sin(πx/L)|⁵ is C⁴ with a jump in the fifth derivative at the
        // periodic seam, so the spectral operators converge at a finite
        // algebraic rate there; the measured orders for R, Δ_g f, and the
        // Hessian must all be at least 2 under 64 → 128 → 256 refinement.
        let l = 2.0 * PI;
        let a = PI / l;
        let p = |x: f64| (a * x).sin().abs().powi(5);
        // On (0, L): p' = 5a sin⁴ cos, p'' = 5a² sin³ (4cos² - sin²).
        let pd = |x: f64| {
            let (s, c) = (a * x).sin_cos();
            5.0 * a * s.powi(4) * c
        };
        let pdd = |x: f64| {
            let (s, c) = (a * x).sin_cos();
            5.0 * a * a * s.powi(3) * (4.0 * c * c - s * s)
        };
        let amp = 0.1;
        let mut errs_r = Vec::new();
        let mut errs_lap = Vec::new();
        let mut errs_hxy = Vec::new();
        for n in [64usize, 128, 256] {
            let grid = Grid::new(n, n, l, l).unwrap();
            let u = GridField::from_fn(grid, |x, y| amp * p(x) * p(y));
            let torus = ConformalTorus::new(u.clone()).unwrap();
            let m = Metric::Torus(torus);
            let f = GridField::from_fn(grid, |x, y| p(x) + 0.5 * p(y));
            let r = match scalar_curvature(&m) {
                ScalarField::Grid(r) => r,
                _ => unreachable!(),
            };
            let lap = match laplace_beltrami(&m, &ScalarField::Grid(f.clone())).unwrap() {
                ScalarField::Grid(v) => v,
                _ => unreachable!(),
            };
            let hxy = match hessian(&m, &ScalarField::Grid(f.clone())).unwrap() {
                SymTensorField::Grid { xy, .. } => xy,
                _ => unreachable!(),
            };
            let (mut er, mut el, mut eh) = (0.0_f64, 0.0_f64, 0.0_f64);
            for i in 0..n {
                for j in 0..n {
                    let (x, y) = (grid.x(i), grid.y(j));
                    let id = grid.idx(i, j);
                    let uval = amp * p(x) * p(y);
                    let lap0_u = amp * (pdd(x) * p(y) + p(x) * pdd(y));
                    let want_r = -2.0 * (-2.0 * uval).exp() * lap0_u;
                    er = er.max((r.data[id] - want_r).abs());
                    let lap0_f = pdd(x) + 0.5 * pdd(y);
                    el = el.max((lap.data[id] - (-2.0 * uval).exp() * lap0_f).abs());
                    // H_xy = f_xy - u_y f_x - u_x f_y with f_xy = 0 here.
                    let want_h = -amp * p(x) * pd(y) * pd(x) - amp * pd(x) * p(y) * 0.5 * pd(y);
                    eh = eh.max((hxy.data[id] - want_h).abs());
                }
            }
            errs_r.push(er);
            errs_lap.push(el);
            errs_hxy.push(eh);
        }
        for (label, errs) in [("R", &errs_r), ("lap", &errs_lap), ("hxy", &errs_hxy)] {
            let order01 = (errs[0] / errs[1]).log2();
            let order12 = (errs[1] / errs[2]).log2();
            assert!(
                order01 >= 2.0 && order12 >= 2.0,
                "{label}: orders {order01:.2}, {order12:.2}, errs {errs:?}"
            );
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let small = Grid::new(4, 4, 1.0, 1.0).unwrap();
        assert!(ConformalTorus::flat(small).is_err());
        assert!(RoundSphere::new(1, 1.0).is_err());
        assert!(RoundSphere::new(2, -1.0).is_err());
        let grid = torus_grid(16);
        let mut u = GridField::zeros(grid);
        u.data[3] = f64::NAN;
        assert!(ConformalTorus::new(u).is_err());
        // Grid mismatch surfaces as an error.
        let t = ConformalTorus::flat(grid).unwrap();
        let other = GridField::zeros(Grid::new(8, 8, 1.0, 1.0).unwrap());
        assert!(laplace_beltrami(&Metric::Torus(t), &ScalarField::Grid(other)).is_err());
    }
}
