//! Direct path discretization of the landmark matching problem.
//!
//! For a fixed path the best velocity field at each instant is the
//! representer one, which makes the instantaneous cost
//! `vᵀ (K(q) + σ²I)⁻¹ v` with `v = q̇`. Paths are piecewise linear over
//! `steps` intervals and the cost is integrated with the trapezoidal rule.
//! This is kept as an independent check on shooting.

use crate::error::{Error, Result};
use crate::kernels::{GramSystem, KernelSpec, Points, DEFAULT_RIDGE};
use crate::optim::{minimize, FnObjective, LbfgsOptions};

#[derive(Debug, Clone)]
pub struct PathProblem {
    pub q0: Points,
    pub q1: Points,
    pub sigma2: f64,
    pub kernel: KernelSpec,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct PathOptions {
    pub steps: usize,
    pub optim: LbfgsOptions,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            steps: 32,
            optim: LbfgsOptions {
                grad_tol: 1e-9,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathResult {
    /// Positions at every node, including both endpoints.
    pub nodes: Vec<Points>,
    pub energy: f64,
    pub history: Vec<f64>,
    pub converged: bool,
}

impl PathProblem {
    fn width(&self) -> usize {
        self.q0.as_slice().len()
    }

    /// Number of free coordinates (interior nodes).
    pub fn dof(&self) -> usize {
        (self.steps - 1) * self.width()
    }

    /// Straight-line initial path.
    pub fn linear_interior(&self) -> Vec<f64> {
        let w = self.width();
        let mut x = Vec::with_capacity(self.dof());
        for t in 1..self.steps {
            let s = t as f64 / self.steps as f64;
            for i in 0..w {
                x.push((1.0 - s) * self.q0.as_slice()[i] + s * self.q1.as_slice()[i]);
            }
        }
        x
    }

    fn node<'a>(&'a self, interior: &'a [f64], t: usize) -> &'a [f64] {
        let w = self.width();
        if t == 0 {
            self.q0.as_slice()
        } else if t == self.steps {
            self.q1.as_slice()
        } else {
            &interior[(t - 1) * w..t * w]
        }
    }

    /// `vᵀ A(q)⁻¹ v` with its gradients in `q` and `v`.
    fn local(&self, q: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let d = self.kernel.dim;
        let pts = Points::new(d, q.to_vec())?;
        let sys = GramSystem::with_ridge(pts, self.kernel, self.sigma2 + DEFAULT_RIDGE * self.kernel.scale)?;
        let w = sys.solve(v)?;
        let value: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
        let n = q.len() / d;
        let mut gq = vec![0.0; q.len()];
        for k in 0..n {
            for j in 0..n {
                if j == k {
                    continue;
                }
                let wk = &w[k * d..(k + 1) * d];
                let wj = &w[j * d..(j + 1) * d];
                let dot: f64 = wk.iter().zip(wj).map(|(a, b)| a * b).sum();
                let g = self.kernel.grad_first(&q[k * d..(k + 1) * d], &q[j * d..(j + 1) * d]);
                for i in 0..d {
                    gq[k * d + i] -= 2.0 * dot * g[i];
                }
            }
        }
        let gv = w.iter().map(|x| 2.0 * x).collect();
        Ok((value, gq, gv))
    }

    /// Discrete path energy and its gradient in the interior coordinates.
    pub fn energy_grad(&self, interior: &[f64]) -> Result<(f64, Vec<f64>)> {
        if interior.len() != self.dof() {
            return Err(Error::ShapeMismatch {
                expected: self.dof().to_string(),
                got: interior.len().to_string(),
            });
        }
        let w = self.width();
        let dt = 1.0 / self.steps as f64;
        let mut e = 0.0;
        let mut grad = vec![0.0; interior.len()];
        let add = |grad: &mut Vec<f64>, t: usize, g: &[f64], c: f64| {
            if t > 0 && t < self.steps {
                for i in 0..w {
                    grad[(t - 1) * w + i] += c * g[i];
                }
            }
        };
        for t in 0..self.steps {
            let (a, b) = (self.node(interior, t), self.node(interior, t + 1));
            let v: Vec<f64> = b.iter().zip(a).map(|(x, y)| (x - y) / dt).collect();
            for (end, node) in [(t, a), (t + 1, b)] {
                let (val, gq, gv) = self.local(node, &v)?;
                e += 0.5 * dt * val;
                add(&mut grad, end, &gq, 0.5 * dt);
                // v depends on both ends: ∂v/∂b = 1/dt, ∂v/∂a = −1/dt.
                add(&mut grad, t + 1, &gv, 0.5);
                add(&mut grad, t, &gv, -0.5);
            }
        }
        Ok((e, grad))
    }
}

/// Minimizes the discrete path energy from the straight-line path.
pub fn optimize_path(
    q0: &Points,
    q1: &Points,
    sigma2: f64,
    kernel: KernelSpec,
    opts: &PathOptions,
) -> Result<PathResult> {
    if q0.len() != q1.len() || q0.dim() != q1.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} landmarks", q0.len()),
            got: format!("{} landmarks", q1.len()),
        });
    }
    if opts.steps < 2 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "need at least 2 intervals".into(),
        });
    }
    let problem = PathProblem {
        q0: q0.clone(),
        q1: q1.clone(),
        sigma2,
        kernel,
        steps: opts.steps,
    };
    // Validate once so the objective below can unwrap.
    problem.energy_grad(&problem.linear_interior())?;
    let mut obj = FnObjective(|x: &[f64]| match problem.energy_grad(x) {
        Ok(r) => r,
        Err(_) => (f64::INFINITY, vec![0.0; x.len()]),
    });
    let rep = minimize(&mut obj, problem.linear_interior(), &opts.optim);
    let mut nodes = Vec::with_capacity(opts.steps + 1);
    for t in 0..=opts.steps {
        nodes.push(Points::new(q0.dim(), problem.node(&rep.x, t).to_vec())?);
    }
    Ok(PathResult {
        nodes,
        energy: rep.value,
        history: rep.history,
        converged: rep.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::central_difference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let problem = PathProblem {
            q0: Points::new(2, vec![0.0, 0.0, 1.0, 0.2]).unwrap(),
            q1: Points::new(2, vec![0.5, 0.8, 1.2, -0.5]).unwrap(),
            sigma2: 0.1,
            kernel: KernelSpec::gaussian(0.8, 1.0, 2).unwrap(),
            steps: 6,
        };
        let x: Vec<f64> = problem
            .linear_interior()
            .iter()
            .map(|v| v + rng.random_range(-0.1..0.1))
            .collect();
        let (_, g) = problem.energy_grad(&x).unwrap();
        let mut f = |y: &[f64]| problem.energy_grad(y).unwrap().0;
        for i in 0..x.len() {
            let fd = central_difference(&mut f, &x, i, 1e-6);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn single_point_path_is_straight() {
        let k = KernelSpec::gaussian(1.0, 1.0, 1).unwrap();
        let r = optimize_path(
            &Points::new(1, vec![0.0]).unwrap(),
            &Points::new(1, vec![0.6]).unwrap(),
            0.0,
            k,
            &PathOptions::default(),
        )
        .unwrap();
        assert!((r.energy - 0.36).abs() < 1e-8);
    }
}
