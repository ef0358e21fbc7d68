//! Image and density metamorphosis on periodic grids.
//!
//! With `z = ν/σ²` and `L = (1 − a∇²)^s` the two systems read
//!
//! ```text
//! image:    L u = −z∇n,   ż = −div(z u),   ṅ = −∇n·u + σ²z
//! density:  L u =  n∇z,   ż = −∇z·u,       ṅ = −div(n u) + σ²z
//! ```
//!
//! Both are written through one transport operator `A_u`, which is `u·∇w`
//! for images and `div(w u)` for densities; the momentum equation is then
//! `ż = A_u*(z)` and the velocity is `L u = −(∂_u A_u(n))* z`.

mod bvp;
mod checks;

pub use bvp::{match_bvp, GridBvp, GridPath, MatchOptions};
pub use checks::{check_horizontality, check_integrated_momentum, integrated_momentum_residual};

use crate::error::{ensure_positive, Error, Result};
use crate::integrate::{rk4_step, step_count};
use crate::io::Table;
use crate::spectral::{OperatorMode, PeriodicGrid, PeriodicOperator};

/// Two component fields; the second is identically zero on 1D grids.
pub type VectorField = [Vec<f64>; 2];

/// Steps with `max|u|·dt/h` above this get a stability warning.
pub const CFL_LIMIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    Image,
    Density,
}

impl GridMode {
    pub fn name(self) -> &'static str {
        match self {
            GridMode::Image => "image",
            GridMode::Density => "density",
        }
    }
}

/// Grid, metric operator, mode and `σ²` shared by the IVP and BVP solvers.
#[derive(Debug, Clone)]
pub struct GridModel {
    op: PeriodicOperator,
    mode: GridMode,
    sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub n: Vec<f64>,
    pub z: Vec<f64>,
    pub u: VectorField,
    pub mode: GridMode,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// `max|u|·dt/h` at the start of the step.
    pub cfl: f64,
    pub warning: Option<String>,
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn neg(mut a: Vec<f64>) -> Vec<f64> {
    a.iter_mut().for_each(|v| *v = -*v);
    a
}

impl GridModel {
    /// `order` is `s`; 2D grids need `s ≥ 2`.
    pub fn new(grid: PeriodicGrid, order: u32, alpha: f64, mode: GridMode, sigma2: f64) -> Result<Self> {
        ensure_positive("sigma2", sigma2)?;
        if grid.dim() == 2 && order < 2 {
            return Err(Error::InvalidParameter {
                name: "order",
                reason: format!("2D grids need order at least 2, got {order}"),
            });
        }
        Ok(Self {
            op: PeriodicOperator::new(grid, order, alpha, OperatorMode::ApplyL)?,
            mode,
            sigma2,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.op.grid()
    }

    pub fn operator(&self) -> &PeriodicOperator {
        &self.op
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn zero_field(&self) -> VectorField {
        let n = self.grid().len();
        [vec![0.0; n], vec![0.0; n]]
    }

    /// `A_u(w)`: `u·∇w` for images, `div(w u)` for densities.
    pub fn transport(&self, u: &VectorField, w: &[f64]) -> Vec<f64> {
        let g = self.grid();
        match self.mode {
            GridMode::Image => {
                let [wx, wy] = g.gradient(w);
                (0..w.len()).map(|i| u[0][i] * wx[i] + u[1][i] * wy[i]).collect()
            }
            GridMode::Density => g.divergence(&[mul(w, &u[0]), mul(w, &u[1])]),
        }
    }

    /// Adjoint of `w ↦ A_u(w)`.
    pub fn transport_adjoint(&self, u: &VectorField, v: &[f64]) -> Vec<f64> {
        let g = self.grid();
        match self.mode {
            GridMode::Image => neg(g.divergence(&[mul(v, &u[0]), mul(v, &u[1])])),
            GridMode::Density => {
                let [vx, vy] = g.gradient(v);
                (0..v.len()).map(|i| -(u[0][i] * vx[i] + u[1][i] * vy[i])).collect()
            }
        }
    }

    /// Adjoint of `u ↦ A_u(w)` applied to `v`: `v∇w` for images, `−w∇v` for densities.
    pub fn transport_adjoint_velocity(&self, w: &[f64], v: &[f64]) -> VectorField {
        let g = self.grid();
        match self.mode {
            GridMode::Image => {
                let [gx, gy] = g.gradient(w);
                [mul(v, &gx), mul(v, &gy)]
            }
            GridMode::Density => {
                let [gx, gy] = g.gradient(v);
                [neg(mul(w, &gx)), neg(mul(w, &gy))]
            }
        }
    }

    /// Velocity fixed by the template momentum.
    pub fn velocity(&self, n: &[f64], z: &[f64]) -> VectorField {
        let f = self.transport_adjoint_velocity(n, z);
        let [a, b] = self.op.apply_k_vec(&f);
        [neg(a), neg(b)]
    }

    /// `⟨u, L u⟩` with cell weights.
    pub fn metric(&self, u: &VectorField) -> f64 {
        let lu = self.op.apply_l_vec(u);
        self.grid().inner(&u[0], &lu[0]) + self.grid().inner(&u[1], &lu[1])
    }

    pub fn state(&self, n: Vec<f64>, z: Vec<f64>) -> Result<GridState> {
        self.grid().check(&n)?;
        self.grid().check(&z)?;
        let u = self.velocity(&n, &z);
        Ok(GridState {
            n,
            z,
            u,
            mode: self.mode,
            sigma2: self.sigma2,
        })
    }

    /// `(ṅ, ż)`.
    pub fn rhs(&self, n: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let u = self.velocity(n, z);
        let dz = self.transport_adjoint(&u, z);
        let an = self.transport(&u, n);
        let dn = an.iter().zip(z).map(|(a, zi)| -a + self.sigma2 * zi).collect();
        (dn, dz)
    }

    /// `h = ⟨u, L u⟩ + σ²‖z‖²`.
    pub fn energy(&self, state: &GridState) -> f64 {
        self.metric(&state.u) + self.sigma2 * self.grid().inner(&state.z, &state.z)
    }

    fn check_state(&self, state: &GridState) -> Result<()> {
        self.grid().check(&state.n)?;
        self.grid().check(&state.z)?;
        if state.mode != self.mode || state.sigma2 != self.sigma2 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} state with sigma2 {}", self.mode.name(), self.sigma2),
                got: format!("{} state with sigma2 {}", state.mode.name(), state.sigma2),
            });
        }
        Ok(())
    }

    /// One classical fourth-order step.
    pub fn step_ivp(&self, state: &GridState, dt: f64) -> Result<(GridState, StepReport)> {
        ensure_positive("dt", dt)?;
        self.check_state(state)?;
        let len = self.grid().len();
        let umax = state.u[0]
            .iter()
            .zip(&state.u[1])
            .map(|(a, b)| (a * a + b * b).sqrt())
            .fold(0.0, f64::max);
        let cfl = umax * dt / self.grid().spacing();
        let warning = (cfl > CFL_LIMIT).then(|| format!("CFL number {cfl:.3} exceeds {CFL_LIMIT}"));
        let mut y = state.n.clone();
        y.extend_from_slice(&state.z);
        let y = rk4_step(&y, dt, |y| {
            let (mut dn, dz) = self.rhs(&y[..len], &y[len..]);
            dn.extend(dz);
            dn
        });
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: dt });
        }
        let next = self.state(y[..len].to_vec(), y[len..].to_vec())?;
        Ok((next, StepReport { cfl, warning }))
    }

    pub fn integrate_ivp(&self, state0: &GridState, horizon: f64, dt: f64) -> Result<GridTrajectory> {
        ensure_positive("dt", dt)?;
        ensure_positive("horizon", horizon)?;
        self.check_state(state0)?;
        let steps = step_count(horizon, dt);
        let h = horizon / steps as f64;
        let mut traj = GridTrajectory {
            times: vec![0.0],
            energy_series: vec![self.energy(state0)],
            mass_series: vec![self.grid().integral(&state0.n)],
            states: vec![state0.clone()],
            max_cfl: 0.0,
            warnings: Vec::new(),
        };
        let mut state = state0.clone();
        for k in 0..steps {
            let t = (k + 1) as f64 * h;
            let (next, report) = self.step_ivp(&state, h).map_err(|e| match e {
                Error::BlowUp { .. } => Error::BlowUp { time: t },
                e => e,
            })?;
            traj.max_cfl = traj.max_cfl.max(report.cfl);
            if let Some(w) = report.warning {
                traj.warnings.push(format!("step {}: {w}", k + 1));
            }
            traj.times.push(t);
            traj.energy_series.push(self.energy(&next));
            traj.mass_series.push(self.grid().integral(&next.n));
            traj.states.push(next.clone());
            state = next;
        }
        Ok(traj)
    }
}

/// `step_ivp` in free-function form.
pub fn step_ivp(model: &GridModel, state: &GridState, dt: f64) -> Result<(GridState, StepReport)> {
    model.step_ivp(state, dt)
}

#[derive(Debug, Clone)]
pub struct GridTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<GridState>,
    pub energy_series: Vec<f64>,
    /// `∫ n` per stored state.
    pub mass_series: Vec<f64>,
    pub max_cfl: f64,
    pub warnings: Vec<String>,
}

impl GridTrajectory {
    pub fn relative_energy_drift(&self) -> f64 {
        let h0 = self.energy_series[0];
        if h0 == 0.0 {
            return 0.0;
        }
        self.energy_series
            .iter()
            .map(|h| (h - h0).abs() / h0.abs())
            .fold(0.0, f64::max)
    }

    /// Columns `t, energy, mass`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["t", "energy", "mass"]);
        for i in 0..self.times.len() {
            t.push(vec![self.times[i], self.energy_series[i], self.mass_series[i]]);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn smooth(grid: &PeriodicGrid, phase: f64) -> Vec<f64> {
        (0..grid.len())
            .map(|i| {
                let [x, y] = grid.coords(i);
                0.5 + 0.3 * (2.0 * PI * x + phase).sin() * (2.0 * PI * y).cos() + 0.1 * (4.0 * PI * y).sin()
            })
            .collect()
    }

    fn model(mode: GridMode, n: usize) -> GridModel {
        GridModel::new(PeriodicGrid::unit(2, n).unwrap(), 2, 0.01, mode, 0.5).unwrap()
    }

    #[test]
    fn zero_momentum_is_constant() {
        for mode in [GridMode::Image, GridMode::Density] {
            let m = model(mode, 8);
            let s = m.state(smooth(m.grid(), 0.3), vec![0.0; 64]).unwrap();
            assert!(s.u.iter().flatten().all(|v| *v == 0.0));
            let (next, rep) = m.step_ivp(&s, 0.1).unwrap();
            assert_eq!(next.n, s.n);
            assert!(rep.warning.is_none());
        }
    }

    #[test]
    fn constant_image_fades_linearly() {
        let m = model(GridMode::Image, 8);
        let s = m.state(vec![0.2; 64], vec![0.7; 64]).unwrap();
        let traj = m.integrate_ivp(&s, 1.0, 0.1).unwrap();
        let last = traj.states.last().unwrap();
        assert!(last.n.iter().all(|v| (v - (0.2 + 0.5 * 0.7)).abs() < 1e-12));
        assert!(last.u.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn adjoints_are_consistent() {
        for mode in [GridMode::Image, GridMode::Density] {
            let m = model(mode, 8);
            let g = m.grid();
            let w = smooth(g, 0.1);
            let v = smooth(g, 1.4);
            let u = [smooth(g, 2.0), smooth(g, -0.7)];
            let lhs = g.inner(&m.transport(&u, &w), &v);
            let rhs = g.inner(&w, &m.transport_adjoint(&u, &v));
            assert!((lhs - rhs).abs() < 1e-12);
            let tu = m.transport_adjoint_velocity(&w, &v);
            let rhs2 = g.inner(&u[0], &tu[0]) + g.inner(&u[1], &tu[1]);
            assert!((lhs - rhs2).abs() < 1e-12);
        }
    }

    #[test]
    fn density_mass_balance() {
        let m = model(GridMode::Density, 8);
        let g = m.grid().clone();
        let s = m.state(smooth(&g, 0.0), smooth(&g, 0.9)).unwrap();
        let (dn, _) = m.rhs(&s.n, &s.z);
        let lhs = g.integral(&dn);
        let rhs = m.sigma2() * g.integral(&s.z);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn rejects_low_order_in_2d() {
        let grid = PeriodicGrid::unit(2, 8).unwrap();
        assert!(GridModel::new(grid, 1, 0.01, GridMode::Image, 1.0).is_err());
    }

    #[test]
    fn cfl_warning_is_reported() {
        let m = model(GridMode::Image, 8);
        let g = m.grid().clone();
        let z: Vec<f64> = smooth(&g, 0.0).iter().map(|v| 400.0 * v).collect();
        let s = m.state(smooth(&g, 0.5), z).unwrap();
        let dt = 1.0;
        let rep = m.step_ivp(&s, dt).map(|r| r.1);
        match rep {
            Ok(r) => assert!(r.warning.is_some()),
            Err(e) => assert!(matches!(e, Error::BlowUp { .. })),
        }
    }
}
