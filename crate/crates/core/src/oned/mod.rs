//! Two-component 1D systems on the unit circle.
//!
//! With `m = (1 − a∂²)u`,
//!
//! ```text
//! ∂t m + u ∂x m + 2m ∂x u = −ρ ∂x(Fρ)
//! ∂t ρ + ∂x(ρu) = 0
//! ```
//!
//! where `F` is the identity (`l2`), `L_H = 1 − b∂²` (`generalized`) or
//! `K_H = L_H⁻¹` (`smooth`). The conserved energy is `∫u m + ∫ρ Fρ`.
//! Products are dealiased with the 2/3 rule.

mod lax;

pub use lax::{lax_spectrum, LaxProblem};

use std::f64::consts::PI;

use crate::error::{ensure_positive, Error, Result};
use crate::integrate::{rk4_step, step_count};
use crate::io::Table;
use crate::spectral::{OperatorMode, PeriodicGrid, PeriodicOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    L2,
    Generalized,
    Smooth,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::L2 => "l2",
            Variant::Generalized => "generalized",
            Variant::Smooth => "smooth",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Variant::L2),
            "generalized" => Ok(Variant::Generalized),
            "smooth" => Ok(Variant::Smooth),
            _ => Err(Error::InvalidParameter {
                name: "variant",
                reason: format!("expected l2, generalized or smooth, got {s}"),
            }),
        }
    }
}

/// Grid and operators of one of the three systems.
#[derive(Debug, Clone)]
pub struct OneDSystem {
    helmholtz: PeriodicOperator,
    template: PeriodicOperator,
    variant: Variant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneDState {
    pub m: Vec<f64>,
    pub rho: Vec<f64>,
}

impl OneDSystem {
    /// `points` must be a power of two; `a` sets `m = (1 − a∂²)u`, `b` sets
    /// `L_H` (ignored by the `l2` variant).
    pub fn new(points: usize, a: f64, variant: Variant, b: f64) -> Result<Self> {
        if !points.is_power_of_two() || points < 8 {
            return Err(Error::InvalidParameter {
                name: "resolution",
                reason: format!("must be a power of two ≥ 8, got {points}"),
            });
        }
        ensure_positive("b", b)?;
        let grid = PeriodicGrid::unit(1, points)?;
        Ok(Self {
            helmholtz: PeriodicOperator::new(grid.clone(), 1, a, OperatorMode::ApplyK)?,
            template: PeriodicOperator::new(grid, 1, b, OperatorMode::ApplyL)?,
            variant,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.helmholtz.grid()
    }

    pub fn helmholtz(&self) -> &PeriodicOperator {
        &self.helmholtz
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Helmholtz coefficient `a`.
    pub fn alpha(&self) -> f64 {
        self.helmholtz.alpha()
    }

    pub fn x(&self) -> Vec<f64> {
        (0..self.grid().len()).map(|i| self.grid().coords(i)[0]).collect()
    }

    /// `u = K_g m`.
    pub fn velocity(&self, m: &[f64]) -> Vec<f64> {
        self.helmholtz.apply_k(m)
    }

    /// `Fρ` for the selected variant.
    pub fn template_field(&self, rho: &[f64]) -> Vec<f64> {
        match self.variant {
            Variant::L2 => rho.to_vec(),
            Variant::Generalized => self.template.apply_l(rho),
            Variant::Smooth => self.template.apply_k(rho),
        }
    }

    pub fn state(&self, m: Vec<f64>, rho: Vec<f64>) -> Result<OneDState> {
        self.grid().check(&m)?;
        self.grid().check(&rho)?;
        Ok(OneDState { m, rho })
    }

    /// `(ṁ, ρ̇)`; inputs and outputs are dealiased.
    pub fn rhs(&self, state: &OneDState) -> (Vec<f64>, Vec<f64>) {
        let g = self.grid();
        let m = g.dealias(&state.m);
        let rho = g.dealias(&state.rho);
        let u = self.velocity(&m);
        let ux = g.derivative(&u, 0);
        let mx = g.derivative(&m, 0);
        let force = g.derivative(&self.template_field(&rho), 0);
        let dm: Vec<f64> = (0..m.len())
            .map(|i| -(u[i] * mx[i] + 2.0 * m[i] * ux[i]) - rho[i] * force[i])
            .collect();
        let flux: Vec<f64> = rho.iter().zip(&u).map(|(r, v)| r * v).collect();
        let drho: Vec<f64> = g.derivative(&flux, 0).iter().map(|v| -v).collect();
        (g.dealias(&dm), g.dealias(&drho))
    }

    /// `∫u m + ∫ρ Fρ`.
    pub fn energy(&self, state: &OneDState) -> f64 {
        let g = self.grid();
        let u = self.velocity(&state.m);
        g.inner(&u, &state.m) + g.inner(&state.rho, &self.template_field(&state.rho))
    }

    pub fn mass(&self, state: &OneDState) -> f64 {
        self.grid().integral(&state.rho)
    }

    pub fn momentum(&self, state: &OneDState) -> f64 {
        self.grid().integral(&state.m)
    }

    /// Gaussian bumps `Σ w_k exp(−d²/2ε²)/(ε√(2π))` on the circle, a
    /// mollified stand-in for `Σ w_k δ_{x_k}`.
    pub fn bumps(&self, centers: &[f64], weights: &[f64], width: f64) -> Vec<f64> {
        let norm = 1.0 / (width * (2.0 * PI).sqrt());
        self.x()
            .iter()
            .map(|x| {
                centers
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| {
                        let mut d = (x - c).rem_euclid(1.0);
                        if d > 0.5 {
                            d -= 1.0;
                        }
                        w * norm * (-0.5 * d * d / (width * width)).exp()
                    })
                    .sum()
            })
            .collect()
    }
}

/// `rhs_1d` in free-function form.
pub fn rhs_1d(system: &OneDSystem, state: &OneDState) -> (Vec<f64>, Vec<f64>) {
    system.rhs(state)
}

#[derive(Debug, Clone)]
pub struct OneDTrajectory {
    pub times: Vec<f64>,
    /// `∫ρ` per step.
    pub mass: Vec<f64>,
    /// `∫m` per step.
    pub momentum: Vec<f64>,
    pub energy: Vec<f64>,
    /// `(t, state)` every `stride` steps, always including both ends.
    pub snapshots: Vec<(f64, OneDState)>,
}

impl OneDTrajectory {
    pub fn last(&self) -> &OneDState {
        &self.snapshots.last().expect("trajectory is never empty").1
    }

    pub fn relative_energy_drift(&self) -> f64 {
        let e0 = self.energy[0];
        if e0 == 0.0 {
            return 0.0;
        }
        self.energy.iter().map(|e| (e - e0).abs() / e0.abs()).fold(0.0, f64::max)
    }

    pub fn mass_drift(&self) -> f64 {
        self.mass.iter().map(|m| (m - self.mass[0]).abs()).fold(0.0, f64::max)
    }

    /// Columns `t, mass, momentum, energy`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["t", "mass", "momentum", "energy"]);
        for i in 0..self.times.len() {
            t.push(vec![self.times[i], self.mass[i], self.momentum[i], self.energy[i]]);
        }
        t
    }

    /// Long format `t, x, m, u, rho` over all snapshots.
    pub fn snapshot_table(&self, system: &OneDSystem) -> Table {
        let mut t = Table::new(["t", "x", "m", "u", "rho"]);
        let x = system.x();
        for (time, s) in &self.snapshots {
            let u = system.velocity(&s.m);
            for i in 0..x.len() {
                t.push(vec![*time, x[i], s.m[i], u[i], s.rho[i]]);
            }
        }
        t
    }
}

/// Classical fourth-order integration; the initial data is dealiased first.
pub fn integrate_1d(
    system: &OneDSystem,
    state0: &OneDState,
    horizon: f64,
    dt: f64,
    stride: usize,
) -> Result<OneDTrajectory> {
    ensure_positive("dt", dt)?;
    ensure_positive("horizon", horizon)?;
    let g = system.grid();
    g.check(&state0.m)?;
    g.check(&state0.rho)?;
    let stride = stride.max(1);
    let steps = step_count(horizon, dt);
    let h = horizon / steps as f64;
    let len = g.len();
    let mut state = OneDState {
        m: g.dealias(&state0.m),
        rho: g.dealias(&state0.rho),
    };
    let mut traj = OneDTrajectory {
        times: vec![0.0],
        mass: vec![system.mass(&state)],
        momentum: vec![system.momentum(&state)],
        energy: vec![system.energy(&state)],
        snapshots: vec![(0.0, state.clone())],
    };
    let mut y = state.m.clone();
    y.extend_from_slice(&state.rho);
    for k in 0..steps {
        y = rk4_step(&y, h, |y| {
            let (mut dm, drho) = system.rhs(&OneDState {
                m: y[..len].to_vec(),
                rho: y[len..].to_vec(),
            });
            dm.extend(drho);
            dm
        });
        let t = (k + 1) as f64 * h;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t });
        }
        state = OneDState {
            m: y[..len].to_vec(),
            rho: y[len..].to_vec(),
        };
        traj.times.push(t);
        traj.mass.push(system.mass(&state));
        traj.momentum.push(system.momentum(&state));
        traj.energy.push(system.energy(&state));
        if (k + 1) % stride == 0 || k + 1 == steps {
            traj.snapshots.push((t, state.clone()));
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_density_is_fixed() {
        let sys = OneDSystem::new(32, 1.0, Variant::L2, 1.0).unwrap();
        let s = sys.state(vec![0.0; 32], vec![0.7; 32]).unwrap();
        let (dm, drho) = sys.rhs(&s);
        assert!(dm.iter().chain(&drho).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn resolution_must_be_power_of_two() {
        assert!(OneDSystem::new(48, 1.0, Variant::L2, 1.0).is_err());
        assert!(OneDSystem::new(64, 1.0, Variant::Smooth, 0.0).is_err());
    }

    #[test]
    fn bumps_have_unit_weight() {
        let sys = OneDSystem::new(256, 1.0, Variant::Smooth, 0.01).unwrap();
        let f = sys.bumps(&[0.1, 0.95], &[1.0, 2.0], 0.03);
        assert!((sys.grid().integral(&f) - 3.0).abs() < 1e-10);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::L2, Variant::Generalized, Variant::Smooth] {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("h1").is_err());
    }
}
