//! Fourier machinery on periodic 1D and 2D grids.
//!
//! Fields are real, stored row-major (`index = iy·nx + ix`); a 1D grid is a
//! single row. First derivatives drop the Nyquist mode, which keeps the
//! discrete derivative real and skew-adjoint.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{ensure_positive, Error, Result};

#[derive(Clone)]
pub struct PeriodicGrid {
    nx: usize,
    ny: usize,
    spacing: f64,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("spacing", &self.spacing)
            .finish()
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.spacing == other.spacing
    }
}

impl PeriodicGrid {
    pub fn new_1d(n: usize, spacing: f64) -> Result<Self> {
        Self::new(1, n, spacing)
    }

    pub fn new_2d(ny: usize, nx: usize, spacing: f64) -> Result<Self> {
        Self::new(ny, nx, spacing)
    }

    /// Unit-period grid: `n` points per axis on `[0, 1)`.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        match dim {
            1 => Self::new_1d(n, 1.0 / n as f64),
            2 => Self::new_2d(n, n, 1.0 / n as f64),
            _ => Err(Error::InvalidParameter {
                name: "dim",
                reason: format!("must be 1 or 2, got {dim}"),
            }),
        }
    }

    fn new(ny: usize, nx: usize, spacing: f64) -> Result<Self> {
        ensure_positive("spacing", spacing)?;
        if nx < 2 || ny < 1 {
            return Err(Error::InvalidParameter {
                name: "grid_shape",
                reason: format!("need at least 2 points per axis, got {ny}x{nx}"),
            });
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            nx,
            ny,
            spacing,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dim(&self) -> usize {
        if self.ny == 1 {
            1
        } else {
            2
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    /// Quadrature weight of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    /// Domain measure `|Ω|`.
    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.len() as f64
    }

    pub fn coords(&self, i: usize) -> [f64; 2] {
        let ix = i % self.nx;
        let iy = i / self.nx;
        [ix as f64 * self.spacing, iy as f64 * self.spacing]
    }

    pub fn check(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} field", self.ny, self.nx),
                got: format!("{} values", field.len()),
            });
        }
        Ok(())
    }

    fn signed_index(k: usize, n: usize) -> i64 {
        if k <= n / 2 {
            k as i64
        } else {
            k as i64 - n as i64
        }
    }

    /// Angular wavenumber along x for spectral column `k`.
    pub fn wavenumber_x(&self, k: usize) -> f64 {
        2.0 * PI * Self::signed_index(k, self.nx) as f64 / (self.nx as f64 * self.spacing)
    }

    pub fn wavenumber_y(&self, k: usize) -> f64 {
        if self.ny == 1 {
            return 0.0;
        }
        2.0 * PI * Self::signed_index(k, self.ny) as f64 / (self.ny as f64 * self.spacing)
    }

    fn is_nyquist(k: usize, n: usize) -> bool {
        n % 2 == 0 && k == n / 2
    }

    pub fn forward(&self, field: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, true);
        data
    }

    /// Inverse transform, normalized, real part.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, false);
        let norm = 1.0 / self.len() as f64;
        spec.iter().map(|c| c.re * norm).collect()
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let (fx, fy) = if forward {
            (&self.fwd_x, &self.fwd_y)
        } else {
            (&self.inv_x, &self.inv_y)
        };
        for row in data.chunks_exact_mut(self.nx) {
            fx.process(row);
        }
        if self.ny > 1 {
            let mut col = vec![Complex64::new(0.0, 0.0); self.ny];
            for ix in 0..self.nx {
                for iy in 0..self.ny {
                    col[iy] = data[iy * self.nx + ix];
                }
                fy.process(&mut col);
                for iy in 0..self.ny {
                    data[iy * self.nx + ix] = col[iy];
                }
            }
        }
    }

    /// Multiplies the spectrum by a real symbol `s(kx, ky)`.
    pub fn apply_symbol(&self, field: &[f64], symbol: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut spec = self.forward(field);
        for iy in 0..self.ny {
            let ky = self.wavenumber_y(iy);
            for ix in 0..self.nx {
                spec[iy * self.nx + ix] *= symbol(self.wavenumber_x(ix), ky);
            }
        }
        self.inverse(spec)
    }

    /// Spectral first derivative along `axis` (0 = x, 1 = y).
    pub fn derivative(&self, field: &[f64], axis: usize) -> Vec<f64> {
        let mut spec = self.forward(field);
        self.derivative_in_place(&mut spec, axis);
        self.inverse(spec)
    }

    fn derivative_in_place(&self, spec: &mut [Complex64], axis: usize) {
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let (k, nyq) = if axis == 0 {
                    (self.wavenumber_x(ix), Self::is_nyquist(ix, self.nx))
                } else {
                    (self.wavenumber_y(iy), self.ny == 1 || Self::is_nyquist(iy, self.ny))
                };
                let c = &mut spec[iy * self.nx + ix];
                *c = if nyq { Complex64::new(0.0, 0.0) } else { *c * Complex64::new(0.0, k) };
            }
        }
    }

    /// Gradient as `[∂x f, ∂y f]`; in 1D the second component is zero.
    pub fn gradient(&self, field: &[f64]) -> [Vec<f64>; 2] {
        let spec = self.forward(field);
        let mut sx = spec.clone();
        self.derivative_in_place(&mut sx, 0);
        let gx = self.inverse(sx);
        let gy = if self.ny > 1 {
            let mut sy = spec;
            self.derivative_in_place(&mut sy, 1);
            self.inverse(sy)
        } else {
            vec![0.0; self.len()]
        };
        [gx, gy]
    }

    pub fn divergence(&self, v: &[Vec<f64>; 2]) -> Vec<f64> {
        let mut out = self.derivative(&v[0], 0);
        if self.ny > 1 {
            for (o, d) in out.iter_mut().zip(self.derivative(&v[1], 1)) {
                *o += d;
            }
        }
        out
    }

    /// Zeroes every mode with `|k| > n/3` along any axis.
    pub fn dealias(&self, field: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(field);
        self.dealias_in_place(&mut spec);
        self.inverse(spec)
    }

    fn dealias_in_place(&self, spec: &mut [Complex64]) {
        let cut_x = self.nx / 3;
        let cut_y = self.ny / 3;
        for iy in 0..self.ny {
            let ky = Self::signed_index(iy, self.ny).unsigned_abs() as usize;
            for ix in 0..self.nx {
                let kx = Self::signed_index(ix, self.nx).unsigned_abs() as usize;
                if kx > cut_x || (self.ny > 1 && ky > cut_y) {
                    spec[iy * self.nx + ix] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Cell-weighted inner product `Σ f g · h^d`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * self.cell_volume()
    }

    pub fn integral(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.cell_volume()
    }

    /// Cyclic shift by whole cells: `out(i + shift) = f(i)`.
    pub fn roll(&self, f: &[f64], shift_x: isize, shift_y: isize) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        for iy in 0..ny {
            for ix in 0..nx {
                let tx = (ix + shift_x).rem_euclid(nx);
                let ty = (iy + shift_y).rem_euclid(ny);
                out[(ty * nx + tx) as usize] = f[(iy * nx + ix) as usize];
            }
        }
        out
    }

    pub fn interpolant(&self, field: &[f64]) -> TrigInterpolant {
        TrigInterpolant {
            grid: self.clone(),
            spec: self.forward(field),
        }
    }
}

/// Band-limited trigonometric interpolant of a grid field.
#[derive(Debug, Clone)]
pub struct TrigInterpolant {
    grid: PeriodicGrid,
    spec: Vec<Complex64>,
}

impl TrigInterpolant {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        let g = &self.grid;
        let mut ex = Vec::with_capacity(g.nx);
        for ix in 0..g.nx {
            ex.push(mode_factor(g.wavenumber_x(ix), p[0], PeriodicGrid::is_nyquist(ix, g.nx)));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for iy in 0..g.ny {
            let ey = if g.ny == 1 {
                Complex64::new(1.0, 0.0)
            } else {
                mode_factor(g.wavenumber_y(iy), p[1], PeriodicGrid::is_nyquist(iy, g.ny))
            };
            let row = &self.spec[iy * g.nx..(iy + 1) * g.nx];
            let mut r = Complex64::new(0.0, 0.0);
            for (c, e) in row.iter().zip(&ex) {
                r += c * e;
            }
            acc += r * ey;
        }
        acc.re / g.len() as f64
    }
}

// Nyquist modes interpolate as cosines so real data stays real off-grid.
fn mode_factor(k: f64, x: f64, nyquist: bool) -> Complex64 {
    if nyquist {
        Complex64::new((k * x).cos(), 0.0)
    } else {
        Complex64::new(0.0, k * x).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorMode {
    /// `L = (1 − a∇²)^s`
    ApplyL,
    /// `K = L⁻¹`
    ApplyK,
}

/// The Fourier multiplier `(1 + a|ξ|²)^{±s}` on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOperator {
    grid: PeriodicGrid,
    order: u32,
    alpha: f64,
    mode: OperatorMode,
}

impl PeriodicOperator {
    pub fn new(grid: PeriodicGrid, order: u32, alpha: f64, mode: OperatorMode) -> Result<Self> {
        ensure_positive("alpha", alpha)?;
        if order == 0 {
            return Err(Error::InvalidParameter {
                name: "order",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self {
            grid,
            order,
            alpha,
            mode,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mode(&self) -> OperatorMode {
        self.mode
    }

    pub fn symbol(&self, kx: f64, ky: f64) -> f64 {
        (1.0 + self.alpha * (kx * kx + ky * ky)).powi(self.order as i32)
    }

    /// Applies the operator selected by `mode`.
    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        self.grid.check(field)?;
        Ok(match self.mode {
            OperatorMode::ApplyL => self.apply_l(field),
            OperatorMode::ApplyK => self.apply_k(field),
        })
    }

    pub fn apply_l(&self, field: &[f64]) -> Vec<f64> {
        self.grid.apply_symbol(field, |kx, ky| self.symbol(kx, ky))
    }

    pub fn apply_k(&self, field: &[f64]) -> Vec<f64> {
        self.grid.apply_symbol(field, |kx, ky| 1.0 / self.symbol(kx, ky))
    }

    /// Componentwise `L` on a vector field.
    pub fn apply_l_vec(&self, v: &[Vec<f64>; 2]) -> [Vec<f64>; 2] {
        [self.apply_l(&v[0]), self.second_component(&v[1], true)]
    }

    pub fn apply_k_vec(&self, v: &[Vec<f64>; 2]) -> [Vec<f64>; 2] {
        [self.apply_k(&v[0]), self.second_component(&v[1], false)]
    }

    fn second_component(&self, f: &[f64], l: bool) -> Vec<f64> {
        if self.grid.dim() == 1 {
            vec![0.0; f.len()]
        } else if l {
            self.apply_l(f)
        } else {
            self.apply_k(f)
        }
    }
}

/// `periodic_apply` in free-function form.
pub fn periodic_apply(op: &PeriodicOperator, field: &[f64]) -> Result<Vec<f64>> {
    op.apply(field)
}
