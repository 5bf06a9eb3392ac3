//! Uniform periodic grids and Fourier derivative operators.
//!
//! Torus fields live on a uniform `nx × ny` grid over `[0, Lx) × [0, Ly)`,
//! stored row-major with the y index fastest. All derivatives are evaluated
//! in Fourier space: for the smooth periodic data this crate works with,
//! differentiation is then accurate to rounding rather than to stencil
//! truncation order, and the discrete integration-by-parts and chain-rule
//! identities that the functional cross-checks rely on hold at the 1e-12
//! level instead of O(h²).
//!
//! Wavenumber conventions: first derivatives zero the Nyquist line (keeps
//! d/dx of real data real and the operator skew-adjoint); second derivatives
//! keep the full |κ|² there, so -Δ stays positive semidefinite with kernel
//! exactly the constants.

use crate::error::{Error, Result};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Shape and physical size of a periodic grid.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidInput(format!(
                "grid must be at least 2x2, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && lx.is_finite()) || !(ly > 0.0 && ly.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "period lengths must be positive and finite, got {lx}, {ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Quadrature weight of one node in the flat reference measure dx dy.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx()
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.hy()
    }
}

/// Real scalar samples on a [`Grid`], row-major, y fastest.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.node_count()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            data: vec![value; grid.node_count()],
        }
    }

    /// Sample `f(x, y)` at the grid nodes.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.node_count());
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                data.push(f(grid.x(i), grid.y(j)));
            }
        }
        Self { grid, data }
    }

    pub fn from_data(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.node_count(),
                grid.nx,
                grid.ny,
                data.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// Plans depend only on the transform length, so they are shared process-wide.
type PlanPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plan_pair(len: usize) -> PlanPair {
    static CACHE: OnceLock<Mutex<HashMap<usize, PlanPair>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(len)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (
                planner.plan_fft_forward(len),
                planner.plan_fft_inverse(len),
            )
        })
        .clone()
}

/// Fourier differentiation on one grid. Construction is cheap; FFT plans are
/// cached globally by length.
pub struct SpectralOps {
    grid: Grid,
    /// First-derivative wavenumbers (Nyquist zeroed).
    kx1: Vec<f64>,
    ky1: Vec<f64>,
    /// Squared wavenumbers for second derivatives (Nyquist kept).
    kx2: Vec<f64>,
    ky2: Vec<f64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

fn wavenumbers(n: usize, l: f64) -> (Vec<f64>, Vec<f64>) {
    let mut first = Vec::with_capacity(n);
    let mut squared = Vec::with_capacity(n);
    for m in 0..n {
        let signed = if 2 * m < n {
            m as f64
        } else if 2 * m == n {
            0.0
        } else {
            m as f64 - n as f64
        };
        let mag = m.min(n - m) as f64;
        first.push(2.0 * std::f64::consts::PI * signed / l);
        let k = 2.0 * std::f64::consts::PI * mag / l;
        squared.push(k * k);
    }
    (first, squared)
}

impl SpectralOps {
    pub fn new(grid: Grid) -> Self {
        let (kx1, kx2) = wavenumbers(grid.nx, grid.lx);
        let (ky1, ky2) = wavenumbers(grid.ny, grid.ly);
        let (row_fwd, row_inv) = plan_pair(grid.ny);
        let (col_fwd, col_inv) = plan_pair(grid.nx);
        Self {
            grid,
            kx1,
            ky1,
            kx2,
            ky2,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Forward 2D transform. Output is in transposed layout `[ky * nx + kx]`
    /// so that multiplier application indexes kx fastest.
    fn spectrum(&self, f: &[f64]) -> Vec<Complex<f64>> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        debug_assert_eq!(f.len(), nx * ny);
        let mut buf: Vec<Complex<f64>> = f.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.row_fwd.process(&mut buf);
        let mut tr = vec![Complex::new(0.0, 0.0); nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                tr[j * nx + i] = buf[i * ny + j];
            }
        }
        self.col_fwd.process(&mut tr);
        tr
    }

    /// Inverse of [`Self::spectrum`]; returns the real part scaled by 1/(nx·ny).
    fn inverse(&self, mut spec: Vec<Complex<f64>>) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        self.col_inv.process(&mut spec);
        let mut buf = vec![Complex::new(0.0, 0.0); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                buf[i * ny + j] = spec[j * nx + i];
            }
        }
        self.row_inv.process(&mut buf);
        let scale = 1.0 / (nx * ny) as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// Apply a real Fourier multiplier m(kx-index, ky-index).
    fn apply_real_multiplier(&self, f: &[f64], m: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let nx = self.grid.nx;
        let mut spec = self.spectrum(f);
        for (jy, row) in spec.chunks_exact_mut(nx).enumerate() {
            for (ix, v) in row.iter_mut().enumerate() {
                *v *= m(ix, jy);
            }
        }
        self.inverse(spec)
    }

    /// Apply an imaginary multiplier i·m(kx-index, ky-index).
    fn apply_imag_multiplier(&self, f: &[f64], m: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let nx = self.grid.nx;
        let mut spec = self.spectrum(f);
        for (jy, row) in spec.chunks_exact_mut(nx).enumerate() {
            for (ix, v) in row.iter_mut().enumerate() {
                let s = m(ix, jy);
                *v = Complex::new(-v.im * s, v.re * s);
            }
        }
        self.inverse(spec)
    }

    pub fn dx(&self, f: &[f64]) -> Vec<f64> {
        self.apply_imag_multiplier(f, |ix, _| self.kx1[ix])
    }

    pub fn dy(&self, f: &[f64]) -> Vec<f64> {
        self.apply_imag_multiplier(f, |_, jy| self.ky1[jy])
    }

    /// Flat Laplacian Δ₀ = ∂²/∂x² + ∂²/∂y².
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.apply_real_multiplier(f, |ix, jy| -(self.kx2[ix] + self.ky2[jy]))
    }

    pub fn dxx(&self, f: &[f64]) -> Vec<f64> {
        self.apply_real_multiplier(f, |ix, _| -self.kx2[ix])
    }

    pub fn dyy(&self, f: &[f64]) -> Vec<f64> {
        self.apply_real_multiplier(f, |_, jy| -self.ky2[jy])
    }

    pub fn dxy(&self, f: &[f64]) -> Vec<f64> {
        self.apply_real_multiplier(f, |ix, jy| -self.kx1[ix] * self.ky1[jy])
    }

    /// Both first derivatives from a single forward transform.
    pub fn grad(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nx = self.grid.nx;
        let spec = self.spectrum(f);
        let mut sx = spec.clone();
        for (jy, row) in sx.chunks_exact_mut(nx).enumerate() {
            let _ = jy;
            for (ix, v) in row.iter_mut().enumerate() {
                let s = self.kx1[ix];
                *v = Complex::new(-v.im * s, v.re * s);
            }
        }
        let mut sy = spec;
        for (jy, row) in sy.chunks_exact_mut(nx).enumerate() {
            let s = self.ky1[jy];
            for v in row.iter_mut() {
                *v = Complex::new(-v.im * s, v.re * s);
            }
        }
        (self.inverse(sx), self.inverse(sy))
    }

    /// Laplacian and both first derivatives from a single forward transform.
    pub fn lap_and_grad(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let nx = self.grid.nx;
        let spec = self.spectrum(f);
        let mut sl = spec.clone();
        for (jy, row) in sl.chunks_exact_mut(nx).enumerate() {
            for (ix, v) in row.iter_mut().enumerate() {
                *v *= -(self.kx2[ix] + self.ky2[jy]);
            }
        }
        let mut sx = spec.clone();
        for row in sx.chunks_exact_mut(nx) {
            for (ix, v) in row.iter_mut().enumerate() {
                let s = self.kx1[ix];
                *v = Complex::new(-v.im * s, v.re * s);
            }
        }
        let mut sy = spec;
        for (jy, row) in sy.chunks_exact_mut(nx).enumerate() {
            let s = self.ky1[jy];
            for v in row.iter_mut() {
                *v = Complex::new(-v.im * s, v.re * s);
            }
        }
        (self.inverse(sl), self.inverse(sx), self.inverse(sy))
    }

    /// Preconditioner solve (4(-Δ) + γ)⁻¹ used by the eigensolver.
    pub fn shifted_inverse_laplacian(&self, f: &[f64], four: f64, gamma: f64) -> Vec<f64> {
        self.apply_real_multiplier(f, |ix, jy| {
            1.0 / (four * (self.kx2[ix] + self.ky2[jy]) + gamma)
        })
    }
}
