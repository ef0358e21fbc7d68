//! Landmark metamorphosis.
//!
//! The state is `Q` positions `q_k` with momenta `p_k`; the velocity field is
//! `u(x) = Σ_l K(x, q_l) p_l` and the landmarks follow
//!
//! ```text
//! q̇_k = u(q_k) + σ² p_k
//! ṗ_k = −Σ_l ∇₁K(q_k, q_l) (p_k · p_l)
//! ```
//!
//! which is Hamiltonian with `h = Σ_kl p_k·K(q_k,q_l)p_l + σ² Σ_k |p_k|²`.
//! At `σ² = 0` these are the EPDiff peakon equations.

mod collision;
mod path;
mod shooting;

pub use collision::{collision_experiment, CollisionKind, CollisionOptions, CollisionResult};
pub use path::{optimize_path, PathOptions, PathProblem, PathResult};
pub use shooting::{shoot_bvp, ShootingOptions, ShootingResult};

use crate::error::{Error, Result};
use crate::integrate::{rk4_step, step_count};
use crate::io::Table;
use crate::kernels::{KernelSpec, Points};

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkPhase {
    pub q: Points,
    pub p: Points,
    pub sigma2: f64,
    pub kernel: KernelSpec,
}

/// Time derivative of a [`LandmarkPhase`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVelocity {
    pub dq: Points,
    pub dp: Points,
}

impl LandmarkPhase {
    pub fn new(q: Points, p: Points, sigma2: f64, kernel: KernelSpec) -> Result<Self> {
        if q.dim() != kernel.dim || p.dim() != kernel.dim || q.len() != p.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} landmarks of dimension {}", q.len(), kernel.dim),
                got: format!("{} momenta of dimension {}", p.len(), p.dim()),
            });
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma2",
                reason: format!("must be non-negative, got {sigma2}"),
            });
        }
        Ok(Self { q, p, sigma2, kernel })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `h = Σ p_k·K(q_k,q_l)p_l + σ²Σ|p_k|²`.
    pub fn energy(&self) -> f64 {
        let n = self.len();
        let mut h = 0.0;
        for k in 0..n {
            let pk = self.p.point(k);
            let pp: f64 = pk.iter().map(|v| v * v).sum();
            h += self.sigma2 * pp;
            for l in 0..n {
                let pl = self.p.point(l);
                let dot: f64 = pk.iter().zip(pl).map(|(a, b)| a * b).sum();
                h += dot * self.kernel.value(self.q.point(k), self.q.point(l));
            }
        }
        h
    }

    /// Velocity field `u(x) = Σ_l K(x, q_l) p_l`.
    pub fn velocity_at(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.kernel.dim];
        for l in 0..self.len() {
            let k = self.kernel.value(x, self.q.point(l));
            for (ui, pi) in u.iter_mut().zip(self.p.point(l)) {
                *ui += k * pi;
            }
        }
        u
    }

    pub fn rhs(&self) -> PhaseVelocity {
        let d = self.kernel.dim;
        let n = self.len();
        let mut dq = Points::zeros(d, n);
        let mut dp = Points::zeros(d, n);
        for k in 0..n {
            let (qk, pk) = (self.q.point(k), self.p.point(k));
            let mut vq = [0.0; 2];
            let mut vp = [0.0; 2];
            for l in 0..n {
                let (ql, pl) = (self.q.point(l), self.p.point(l));
                let kv = self.kernel.value(qk, ql);
                let g = self.kernel.grad_first(qk, ql);
                let dot: f64 = pk.iter().zip(pl).map(|(a, b)| a * b).sum();
                for i in 0..d {
                    vq[i] += kv * pl[i];
                    vp[i] -= g[i] * dot;
                }
            }
            for i in 0..d {
                dq.point_mut(k)[i] = vq[i] + self.sigma2 * pk[i];
                dp.point_mut(k)[i] = vp[i];
            }
        }
        PhaseVelocity { dq, dp }
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut y = self.q.as_slice().to_vec();
        y.extend_from_slice(self.p.as_slice());
        y
    }

    fn with_flat(&self, y: &[f64]) -> Self {
        let half = y.len() / 2;
        let d = self.kernel.dim;
        Self {
            q: Points::new(d, y[..half].to_vec()).expect("consistent layout"),
            p: Points::new(d, y[half..].to_vec()).expect("consistent layout"),
            sigma2: self.sigma2,
            kernel: self.kernel,
        }
    }
}

/// `rhs` in free-function form.
pub fn rhs(phase: &LandmarkPhase) -> PhaseVelocity {
    phase.rhs()
}

#[derive(Debug, Clone)]
pub struct LandmarkTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<LandmarkPhase>,
    pub energy_series: Vec<f64>,
}

impl LandmarkTrajectory {
    pub fn last(&self) -> &LandmarkPhase {
        self.states.last().expect("trajectory is never empty")
    }

    /// `max_t |h_t − h_0| / h_0`, zero when `h_0 = 0`.
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

    /// Columns `t, q_1..q_Q, p_1..p_Q, energy` (with `_x`/`_y` suffixes in 2D).
    pub fn to_table(&self) -> Table {
        let first = &self.states[0];
        let d = first.kernel.dim;
        let n = first.len();
        let suffix = |k: usize, i: usize| {
            if d == 1 {
                format!("{}", k + 1)
            } else {
                format!("{}_{}", k + 1, ["x", "y"][i])
            }
        };
        let mut header = vec!["t".to_string()];
        for name in ["q", "p"] {
            for k in 0..n {
                for i in 0..d {
                    header.push(format!("{name}_{}", suffix(k, i)));
                }
            }
        }
        header.push("energy".into());
        let mut table = Table::new(header);
        for ((t, s), h) in self.times.iter().zip(&self.states).zip(&self.energy_series) {
            let mut row = vec![*t];
            row.extend_from_slice(s.q.as_slice());
            row.extend_from_slice(s.p.as_slice());
            row.push(*h);
            table.push(row);
        }
        table
    }
}

/// Integrates the landmark equations with the classical fourth-order scheme.
///
/// The horizon is split into equal steps no longer than `dt`.
pub fn integrate_ivp(phase0: &LandmarkPhase, horizon: f64, dt: f64) -> Result<LandmarkTrajectory> {
    crate::error::ensure_positive("dt", dt)?;
    crate::error::ensure_positive("horizon", horizon)?;
    let steps = step_count(horizon, dt);
    let h = horizon / steps as f64;
    let mut y = phase0.to_flat();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut energy_series = Vec::with_capacity(steps + 1);
    times.push(0.0);
    energy_series.push(phase0.energy());
    states.push(phase0.clone());
    for n in 0..steps {
        y = rk4_step(&y, h, |y| {
            let v = phase0.with_flat(y).rhs();
            let mut out = v.dq.into_vec();
            out.extend(v.dp.into_vec());
            out
        });
        let t = (n + 1) as f64 * h;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t });
        }
        let s = phase0.with_flat(&y);
        times.push(t);
        energy_series.push(s.energy());
        states.push(s);
    }
    Ok(LandmarkTrajectory {
        times,
        states,
        energy_series,
    })
}

/// Terminal state only, without storing the trajectory.
pub(crate) fn flow_endpoint(phase0: &LandmarkPhase, steps: usize) -> Result<LandmarkPhase> {
    let h = 1.0 / steps as f64;
    let mut y = phase0.to_flat();
    for n in 0..steps {
        y = rk4_step(&y, h, |y| {
            let v = phase0.with_flat(y).rhs();
            let mut out = v.dq.into_vec();
            out.extend(v.dp.into_vec());
            out
        });
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: (n + 1) as f64 * h });
        }
    }
    Ok(phase0.with_flat(&y))
}
