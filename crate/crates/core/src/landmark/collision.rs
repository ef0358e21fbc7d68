//! Two-peakon collision experiments on the line.

use super::{integrate_ivp, LandmarkPhase, LandmarkTrajectory};
use crate::error::Result;
use crate::io::Table;
use crate::kernels::{KernelSpec, Points};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionKind {
    /// `q = (−1, 1)`, `p = (g/2, −g/2)`.
    HeadOn,
    /// `q = (−1, 0)`, `p = (p_front + g, p_front)`: the rear peakon is faster.
    Overtaking,
}

#[derive(Debug, Clone)]
pub struct CollisionOptions {
    pub dt: f64,
    pub kernel_width: f64,
    /// Momentum of the front peakon in the overtaking setup.
    pub p_front: f64,
}

impl Default for CollisionOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            kernel_width: 1.0,
            p_front: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CollisionResult {
    pub times: Vec<f64>,
    /// `r(t) = q₂(t) − q₁(t)`.
    pub separation: Vec<f64>,
    pub crossing: bool,
    /// First zero of `r`, linearly interpolated between steps.
    pub crossing_time: Option<f64>,
    pub trajectory: LandmarkTrajectory,
}

impl CollisionResult {
    pub fn min_separation(&self) -> f64 {
        self.separation.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn separation_table(&self) -> Table {
        let mut t = Table::new(["t", "r"]);
        for (ti, r) in self.times.iter().zip(&self.separation) {
            t.push(vec![*ti, *r]);
        }
        t
    }
}

pub fn initial_phase(kind: CollisionKind, p_gap: f64, sigma2: f64, opts: &CollisionOptions) -> Result<LandmarkPhase> {
    let (q, p) = match kind {
        CollisionKind::HeadOn => (vec![-1.0, 1.0], vec![0.5 * p_gap, -0.5 * p_gap]),
        CollisionKind::Overtaking => (vec![-1.0, 0.0], vec![opts.p_front + p_gap, opts.p_front]),
    };
    LandmarkPhase::new(
        Points::new(1, q)?,
        Points::new(1, p)?,
        sigma2,
        KernelSpec::gaussian(opts.kernel_width, 1.0, 1)?,
    )
}

pub fn collision_experiment(
    kind: CollisionKind,
    p_gap: f64,
    sigma2: f64,
    horizon: f64,
    opts: &CollisionOptions,
) -> Result<CollisionResult> {
    let phase = initial_phase(kind, p_gap, sigma2, opts)?;
    let trajectory = integrate_ivp(&phase, horizon, opts.dt)?;
    let separation: Vec<f64> = trajectory
        .states
        .iter()
        .map(|s| s.q.as_slice()[1] - s.q.as_slice()[0])
        .collect();
    let times = trajectory.times.clone();
    let crossing_time = separation.windows(2).zip(times.windows(2)).find_map(|(r, t)| {
        if r[0] > 0.0 && r[1] <= 0.0 {
            Some(t[0] + (t[1] - t[0]) * r[0] / (r[0] - r[1]))
        } else {
            None
        }
    });
    let crossing = crossing_time.is_some() || separation[0] <= 0.0;
    Ok(CollisionResult {
        times,
        separation,
        crossing,
        crossing_time,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_time_is_interpolated() {
        // Zero momentum gap with σ² > 0 makes the head-on pair stay put.
        let r = collision_experiment(CollisionKind::HeadOn, 0.0, 0.1, 0.1, &CollisionOptions::default()).unwrap();
        assert!(!r.crossing);
        assert!(r.separation.iter().all(|v| *v == 2.0));
    }

    #[test]
    fn separation_table_columns() {
        let r = collision_experiment(CollisionKind::Overtaking, 0.5, 0.0, 0.01, &CollisionOptions::default()).unwrap();
        let t = r.separation_table();
        assert_eq!(t.header, ["t", "r"]);
        assert_eq!(t.rows[0], vec![0.0, 1.0]);
    }
}
