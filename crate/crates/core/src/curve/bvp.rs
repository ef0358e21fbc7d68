//! Matching two closed curves by minimizing the discrete path energy.
//!
//! Nodes `α_0..α_T` sit at `t = kΔt` on `[0, 1]`, velocities `u_t` live on
//! intervals. With `d_t = (α_{t+1} − α_t)/Δt` and `ā'_t` the centered
//! difference of `½(α_t + α_{t+1})`,
//!
//! ```text
//! E = Σ_t Δt [dθ Σ_j (Du_t)_j² + (1/σ²) dθ Σ_j (d_t + u_t ā'_t)_j²]
//! ```
//!
//! with `D` the periodic forward difference. Each `u_t` is the exact
//! zero-mean minimizer of its quadratic (constant `u` is free under `∫u'²`); the reduced energy is minimized over the
//! interior nodes, each kept on the closure set `dθ Σ h_α = 0`.

use std::cell::Cell;

use super::{CurveSpace, CurveState};
use crate::error::{ensure_positive, Error, Result};
use crate::io::Table;
use crate::kernels::{cholesky, cholesky_solve};
use crate::optim::{minimize, LbfgsOptions, Objective};

#[derive(Debug, Clone)]
pub struct CurveMatchOptions {
    /// Number of time intervals `T`.
    pub timesteps: usize,
    /// Stationarity tolerance relative to `1 + E`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CurveMatchOptions {
    fn default() -> Self {
        Self {
            timesteps: 10,
            tol: 1e-6,
            max_iter: 3000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CurvePath {
    pub dt: f64,
    pub sigma2: f64,
    /// `T + 1` node lifts.
    pub alphas: Vec<Vec<f64>>,
    /// One velocity per interval.
    pub velocities: Vec<Vec<f64>>,
    /// `ρ_t = (d_t + u_t ā'_t)/σ²` per interval.
    pub momenta: Vec<Vec<f64>>,
    /// Closure multipliers at interior nodes.
    pub multipliers: Vec<[f64; 2]>,
    pub energy: f64,
    pub deformation_energy: f64,
    pub template_energy: f64,
    /// Energy after every accepted optimizer step.
    pub history: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Largest closure residual over every node the optimizer evaluated.
    pub max_closure_residual: f64,
}

impl CurvePath {
    pub fn timesteps(&self) -> usize {
        self.velocities.len()
    }

    /// Node states; `u` and `ρ` average the adjacent intervals.
    pub fn states(&self) -> Vec<CurveState> {
        let t = self.timesteps();
        (0..=t)
            .map(|k| {
                let pick = |f: &Vec<Vec<f64>>| -> Vec<f64> {
                    match k {
                        0 => f[0].clone(),
                        k if k == t => f[t - 1].clone(),
                        _ => f[k - 1].iter().zip(&f[k]).map(|(a, b)| 0.5 * (a + b)).collect(),
                    }
                };
                CurveState {
                    alpha: self.alphas[k].clone(),
                    rho: pick(&self.momenta),
                    u: pick(&self.velocities),
                    lambda: if k == 0 || k == t { [0.0; 2] } else { self.multipliers[k - 1] },
                    sigma2: self.sigma2,
                }
            })
            .collect()
    }

    /// Columns `iteration, energy`.
    pub fn history_table(&self) -> Table {
        let mut t = Table::new(["iteration", "energy"]);
        for (i, e) in self.history.iter().enumerate() {
            t.push(vec![i as f64, *e]);
        }
        t
    }

    /// Per-interval energy `∫u'² + (1/σ²)∫ν²` in columns `t, energy`.
    pub fn energy_table(&self, space: &CurveSpace) -> Table {
        let d = space.dtheta();
        let mut t = Table::new(["t", "energy"]);
        for (k, (u, rho)) in self.velocities.iter().zip(&self.momenta).enumerate() {
            let m = u.len();
            let du: f64 = (0..m).map(|j| ((u[(j + 1) % m] - u[j]) / d).powi(2)).sum();
            let nu: f64 = rho.iter().map(|r| r * r).sum();
            t.push(vec![(k as f64 + 0.5) * self.dt, d * du + self.sigma2 * d * nu]);
        }
        t
    }

    /// Long format `t, theta, alpha` over all nodes.
    pub fn snapshot_table(&self, space: &CurveSpace) -> Table {
        let mut t = Table::new(["t", "theta", "alpha"]);
        let th = space.theta();
        for (k, a) in self.alphas.iter().enumerate() {
            for (x, v) in th.iter().zip(a) {
                t.push(vec![k as f64 * self.dt, *x, *v]);
            }
        }
        t
    }

    /// Long format `t, x, y` of the reconstructed polylines.
    pub fn polyline_table(&self, space: &CurveSpace) -> Table {
        let mut t = Table::new(["t", "x", "y"]);
        for (k, a) in self.alphas.iter().enumerate() {
            for p in space.reconstruct(a) {
                t.push(vec![k as f64 * self.dt, p[0], p[1]]);
            }
        }
        t
    }
}

/// Discrete matching problem between two closed lifts.
#[derive(Debug, Clone)]
pub struct CurveBvp<'a> {
    space: &'a CurveSpace,
    sigma2: f64,
    steps: usize,
    alpha0: Vec<f64>,
    alpha1: Vec<f64>,
}

struct Interval {
    u: Vec<f64>,
    r: Vec<f64>,
    deformation: f64,
    template: f64,
}

impl<'a> CurveBvp<'a> {
    /// Endpoints are projected onto the closure set first.
    pub fn new(space: &'a CurveSpace, alpha0: &[f64], alpha1: &[f64], sigma2: f64, steps: usize) -> Result<Self> {
        ensure_positive("sigma2", sigma2)?;
        if steps == 0 {
            return Err(Error::InvalidParameter {
                name: "timesteps",
                reason: "need at least one interval".into(),
            });
        }
        Ok(Self {
            space,
            sigma2,
            steps,
            alpha0: space.project_closed(alpha0)?,
            alpha1: space.project_closed(alpha1)?,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn dof(&self) -> usize {
        (self.steps - 1) * self.space.points()
    }

    pub fn endpoints(&self) -> (&[f64], &[f64]) {
        (&self.alpha0, &self.alpha1)
    }

    pub fn linear_fade(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dof());
        for k in 1..self.steps {
            let s = k as f64 / self.steps as f64;
            x.extend(self.alpha0.iter().zip(&self.alpha1).map(|(a, b)| (1.0 - s) * a + s * b));
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut nodes = vec![self.alpha0.clone()];
        nodes.extend(x.chunks(self.space.points()).map(|c| c.to_vec()));
        nodes.push(self.alpha1.clone());
        nodes
    }

    /// Centered difference of `½(a + b)` with the lift jump at the seam.
    fn mid_slope(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let m = a.len();
        let d = self.space.dtheta();
        let jump = self.space.period_jump();
        let mid = |j: usize| 0.5 * (a[j] + b[j]);
        (0..m)
            .map(|j| {
                let next = if j + 1 == m { mid(0) + jump } else { mid(j + 1) };
                let prev = if j == 0 { mid(m - 1) - jump } else { mid(j - 1) };
                (next - prev) / (2.0 * d)
            })
            .collect()
    }

    fn interval(&self, a: &[f64], b: &[f64]) -> Result<Interval> {
        let m = a.len();
        let d = self.space.dtheta();
        let dt = self.dt();
        let s2 = self.sigma2;
        let slope = self.mid_slope(a, b);
        let rate: Vec<f64> = (0..m).map(|j| (b[j] - a[j]) / dt).collect();
        // (DᵀD + diag(ā'²)/σ²) u = −ā' d/σ².
        let mut mat = vec![0.0; m * m];
        let c = 1.0 / (d * d);
        for j in 0..m {
            mat[j * m + j] = 2.0 * c + slope[j] * slope[j] / s2;
            mat[j * m + (j + 1) % m] -= c;
            mat[j * m + (j + m - 1) % m] -= c;
        }
        let l = cholesky(&mut mat, m)?;
        let mut u: Vec<f64> = (0..m).map(|j| -slope[j] * rate[j] / s2).collect();
        cholesky_solve(&l, m, &mut u);
        // Zero-mean gauge via the multiplier of 1ᵀu = 0.
        let mut ones = vec![1.0; m];
        cholesky_solve(&l, m, &mut ones);
        let shift = u.iter().sum::<f64>() / ones.iter().sum::<f64>();
        for (v, o) in u.iter_mut().zip(&ones) {
            *v -= shift * o;
        }
        let r: Vec<f64> = (0..m).map(|j| rate[j] + u[j] * slope[j]).collect();
        let deformation = d * (0..m).map(|j| ((u[(j + 1) % m] - u[j]) / d).powi(2)).sum::<f64>();
        let template = d * r.iter().map(|v| v * v).sum::<f64>() / s2;
        Ok(Interval {
            u,
            r,
            deformation,
            template,
        })
    }

    /// Reduced energy and its gradient with respect to the interior nodes.
    pub fn energy_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (e, g, _) = self.evaluate(x)?;
        Ok((e, g))
    }

    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>, Vec<Interval>)> {
        if x.len() != self.dof() {
            return Err(Error::ShapeMismatch {
                expected: self.dof().to_string(),
                got: x.len().to_string(),
            });
        }
        let nodes = self.unpack(x);
        let m = self.space.points();
        let d = self.space.dtheta();
        let dt = self.dt();
        let mut grad = vec![0.0; self.dof()];
        let mut energy = 0.0;
        let mut parts = Vec::with_capacity(self.steps);
        for t in 0..self.steps {
            let iv = self.interval(&nodes[t], &nodes[t + 1])?;
            energy += dt * (iv.deformation + iv.template);
            let c = dt * 2.0 * d / self.sigma2;
            for k in 0..m {
                let ru = |j: usize| iv.r[j] * iv.u[j];
                let cross = (ru((k + m - 1) % m) - ru((k + 1) % m)) / (4.0 * d);
                if t + 1 < self.steps {
                    grad[t * m + k] += c * (iv.r[k] / dt + cross);
                }
                if t > 0 {
                    grad[(t - 1) * m + k] += c * (-iv.r[k] / dt + cross);
                }
            }
            parts.push(iv);
        }
        Ok((energy, grad, parts))
    }

    /// Removes the component normal to the closure set at every node.
    pub fn project(&self, x: &[f64], v: &mut [f64]) {
        let m = self.space.points();
        for (node, vel) in x.chunks(m).zip(v.chunks_mut(m)) {
            let mu = normal_coefficients(node, vel);
            for (a, w) in node.iter().zip(vel.iter_mut()) {
                let (s, c) = a.sin_cos();
                *w -= -s * mu[0] + c * mu[1];
            }
        }
    }

    /// Closure multipliers `λ_t` from the normal part of the gradient.
    fn multipliers(&self, x: &[f64], g: &[f64]) -> Vec<[f64; 2]> {
        let m = self.space.points();
        let scale = 2.0 * self.dt() * self.space.dtheta();
        x.chunks(m)
            .zip(g.chunks(m))
            .map(|(node, gr)| {
                let mu = normal_coefficients(node, gr);
                [mu[0] / scale, mu[1] / scale]
            })
            .collect()
    }

    /// `√(Σ g²/(Δt dθ))` of the projected gradient.
    pub fn gradient_norm(&self, g: &[f64]) -> f64 {
        (g.iter().map(|v| v * v).sum::<f64>() / (self.dt() * self.space.dtheta())).sqrt()
    }

    /// Time-tridiagonal inverse of the template Hessian, per `θ` node.
    fn time_precondition(&self, v: &mut [f64]) {
        let m = self.space.points();
        let n = self.steps - 1;
        let c = 2.0 * self.space.dtheta() / (self.sigma2 * self.dt());
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        for j in 0..m {
            for k in 0..n {
                let (a, b, cc) = (-c, 2.0 * c, -c);
                let denom = if k == 0 { b } else { b - a * cp[k - 1] };
                cp[k] = cc / denom;
                let prev = if k == 0 { 0.0 } else { dp[k - 1] };
                dp[k] = (v[k * m + j] - a * prev) / denom;
            }
            for k in (0..n).rev() {
                let next = if k + 1 < n { v[(k + 1) * m + j] } else { 0.0 };
                v[k * m + j] = dp[k] - cp[k] * next;
            }
        }
    }
}

/// Least-squares coefficients `μ` of `v ≈ Σ μ_i h^⊥_i` over the node.
fn normal_coefficients(node: &[f64], v: &[f64]) -> [f64; 2] {
    let (mut g00, mut g01, mut g11, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, w) in node.iter().zip(v) {
        let (s, c) = a.sin_cos();
        g00 += s * s;
        g01 -= s * c;
        g11 += c * c;
        b0 -= s * w;
        b1 += c * w;
    }
    let det = g00 * g11 - g01 * g01;
    if !(det > 0.0) {
        return [0.0; 2];
    }
    [(g11 * b0 - g01 * b1) / det, (g00 * b1 - g01 * b0) / det]
}

struct Reduced<'b, 'a> {
    bvp: &'b CurveBvp<'a>,
    max_closure: Cell<f64>,
    failed: Cell<bool>,
}

impl Objective for Reduced<'_, '_> {
    fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        let m = self.bvp.space.points();
        let worst = x
            .chunks(m)
            .map(|n| self.bvp.space.closure_residual(n))
            .fold(self.max_closure.get(), f64::max);
        self.max_closure.set(worst);
        match self.bvp.energy_grad(x) {
            Ok(v) => v,
            Err(_) => {
                self.failed.set(true);
                (f64::INFINITY, vec![0.0; x.len()])
            }
        }
    }

    fn project(&self, x: &[f64], v: &mut [f64]) {
        self.bvp.project(x, v);
    }

    fn retract(&self, x: &mut [f64]) -> bool {
        let m = self.bvp.space.points();
        for node in x.chunks_mut(m) {
            match self.bvp.space.project_closed(node) {
                Ok(p) => node.copy_from_slice(&p),
                Err(_) => return false,
            }
        }
        true
    }

    fn precondition(&self, v: &mut [f64]) -> bool {
        self.bvp.time_precondition(v);
        true
    }
}

/// Minimizes the path energy between two closed curves on `[0, 1]`.
pub fn match_curves(
    space: &CurveSpace,
    alpha0: &[f64],
    alpha1: &[f64],
    sigma2: f64,
    opts: &CurveMatchOptions,
) -> Result<CurvePath> {
    let bvp = CurveBvp::new(space, alpha0, alpha1, sigma2, opts.timesteps)?;
    let dt = bvp.dt();
    let (x, history, iterations, max_closure) = if bvp.dof() == 0 {
        (Vec::new(), Vec::new(), 0, 0.0)
    } else {
        let mut obj = Reduced {
            bvp: &bvp,
            max_closure: Cell::new(0.0),
            failed: Cell::new(false),
        };
        let lopts = LbfgsOptions {
            max_iter: opts.max_iter,
            grad_tol: 0.1 * opts.tol * (dt * space.dtheta()).sqrt(),
            f_tol: 1e-15,
            ..Default::default()
        };
        let rep = minimize(&mut obj, bvp.linear_fade(), &lopts);
        if rep.history.is_empty() || !rep.value.is_finite() {
            return Err(Error::Constraint {
                residual: obj.max_closure.get(),
            });
        }
        (rep.x, rep.history, rep.iterations, obj.max_closure.get())
    };
    let (energy, mut grad, parts) = bvp.evaluate(&x)?;
    let multipliers = bvp.multipliers(&x, &grad);
    bvp.project(&x, &mut grad);
    let grad_norm = bvp.gradient_norm(&grad);
    if grad_norm > opts.tol * (1.0 + energy) {
        return Err(Error::NonConvergence {
            iterations,
            residual: grad_norm,
        });
    }
    let history = if history.is_empty() { vec![energy] } else { history };
    Ok(CurvePath {
        dt,
        sigma2,
        alphas: bvp.unpack(&x),
        momenta: parts.iter().map(|p| p.r.iter().map(|v| v / sigma2).collect()).collect(),
        deformation_energy: dt * parts.iter().map(|p| p.deformation).sum::<f64>(),
        template_energy: dt * parts.iter().map(|p| p.template).sum::<f64>(),
        velocities: parts.into_iter().map(|p| p.u).collect(),
        multipliers,
        energy,
        history,
        grad_norm,
        iterations,
        max_closure_residual: max_closure,
    })
}
