//! Matching two grid fields by minimizing the discrete path energy.
//!
//! Nodes `n_0..n_T` sit at `t = kΔt`, velocities `u_t` live on intervals,
//! and the template velocity on interval `t` is
//!
//! ```text
//! ν_t = (n_{t+1} − n_t)/Δt + A_{u_t}(n̄_t),    n̄_t = ½(n_t + n_{t+1})
//! E   = Σ_t Δt [⟨u_t, L u_t⟩ + (1/σ²)‖ν_t‖²]
//! ```
//!
//! For fixed images the energy is quadratic in each `u_t`, and for fixed
//! velocities it is quadratic in the interior images, so the solver
//! alternates exact block solves and then polishes with quasi-Newton steps
//! on the reduced energy `min_u E`.

use super::{GridModel, GridState, VectorField};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::optim::{conjugate_gradient, minimize, LbfgsOptions, Objective};

#[derive(Debug, Clone)]
pub struct MatchOptions {
    /// Number of time intervals `T`.
    pub timesteps: usize,
    /// Stationarity tolerance relative to `1 + E`.
    pub tol: f64,
    /// Alternating sweeps before the quasi-Newton polish.
    pub sweeps: usize,
    pub max_iter: usize,
    /// Relative residual for the inner linear solves.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            timesteps: 10,
            tol: 1e-5,
            sweeps: 20,
            max_iter: 2000,
            inner_tol: 1e-12,
            inner_max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridPath {
    pub dt: f64,
    /// `n_0..n_T`.
    pub images: Vec<Vec<f64>>,
    /// `u_t` on each interval.
    pub velocities: Vec<VectorField>,
    /// `z_t = ν_t/σ²` on each interval.
    pub momenta: Vec<Vec<f64>>,
    pub energy: f64,
    pub deformation_energy: f64,
    pub template_energy: f64,
    /// Energy after every sweep and accepted quasi-Newton step.
    pub history: Vec<f64>,
    /// `√(Σ g² / (Δt·h^d))` over all free coordinates.
    pub grad_norm: f64,
    pub iterations: usize,
}

impl GridPath {
    pub fn timesteps(&self) -> usize {
        self.velocities.len()
    }

    /// Interval state `(n̄_t, z_t, u_t)`.
    pub fn state(&self, model: &GridModel, t: usize) -> GridState {
        let nbar = self.images[t].iter().zip(&self.images[t + 1]).map(|(a, b)| 0.5 * (a + b)).collect();
        GridState {
            n: nbar,
            z: self.momenta[t].clone(),
            u: self.velocities[t].clone(),
            mode: model.mode(),
            sigma2: model.sigma2(),
        }
    }

    /// Columns `iteration, energy`.
    pub fn history_table(&self) -> Table {
        let mut t = Table::new(["iteration", "energy"]);
        for (i, e) in self.history.iter().enumerate() {
            t.push(vec![i as f64, *e]);
        }
        t
    }
}

/// Energy split `(deformation, template)` and template velocities.
#[derive(Debug, Clone)]
pub struct EnergyParts {
    pub deformation: f64,
    pub template: f64,
    pub nu: Vec<Vec<f64>>,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.deformation + self.template
    }
}

/// A discretized matching problem with fixed endpoints.
#[derive(Debug, Clone)]
pub struct GridBvp<'a> {
    model: &'a GridModel,
    n0: Vec<f64>,
    n1: Vec<f64>,
    steps: usize,
}

impl<'a> GridBvp<'a> {
    pub fn new(model: &'a GridModel, n0: &[f64], n1: &[f64], steps: usize) -> Result<Self> {
        model.grid().check(n0)?;
        model.grid().check(n1)?;
        if steps < 2 {
            return Err(Error::InvalidParameter {
                name: "timesteps",
                reason: format!("need at least 2, got {steps}"),
            });
        }
        Ok(Self {
            model,
            n0: n0.to_vec(),
            n1: n1.to_vec(),
            steps,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    fn len(&self) -> usize {
        self.model.grid().len()
    }

    /// Interior unknowns: `(T−1)·N` image values followed by `T·2N` velocity values.
    pub fn dof(&self) -> usize {
        (self.steps - 1) * self.len() + self.steps * 2 * self.len()
    }

    pub fn linear_fade(&self) -> Vec<Vec<f64>> {
        (0..=self.steps)
            .map(|k| {
                let s = k as f64 / self.steps as f64;
                self.n0.iter().zip(&self.n1).map(|(a, b)| (1.0 - s) * a + s * b).collect()
            })
            .collect()
    }

    fn nodes_from(&self, interior: &[f64]) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut nodes = vec![self.n0.clone()];
        nodes.extend(interior.chunks_exact(n).map(|c| c.to_vec()));
        nodes.push(self.n1.clone());
        nodes
    }

    /// Splits a flat coordinate vector into nodes and velocities.
    pub fn unpack(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<VectorField>) {
        let n = self.len();
        let split = (self.steps - 1) * n;
        let nodes = self.nodes_from(&x[..split]);
        let u = x[split..]
            .chunks_exact(2 * n)
            .map(|c| [c[..n].to_vec(), c[n..].to_vec()])
            .collect();
        (nodes, u)
    }

    pub fn pack(&self, nodes: &[Vec<f64>], u: &[VectorField]) -> Vec<f64> {
        let mut x: Vec<f64> = nodes[1..self.steps].iter().flatten().copied().collect();
        for f in u {
            x.extend_from_slice(&f[0]);
            x.extend_from_slice(&f[1]);
        }
        x
    }

    fn midpoint(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
    }

    fn nu(&self, a: &[f64], b: &[f64], u: &VectorField) -> Vec<f64> {
        let dt = self.dt();
        let tr = self.model.transport(u, &Self::midpoint(a, b));
        (0..a.len()).map(|i| (b[i] - a[i]) / dt + tr[i]).collect()
    }

    pub fn energy_parts(&self, nodes: &[Vec<f64>], u: &[VectorField]) -> EnergyParts {
        let dt = self.dt();
        let g = self.model.grid();
        let mut deformation = 0.0;
        let mut template = 0.0;
        let mut nus = Vec::with_capacity(self.steps);
        for t in 0..self.steps {
            let nu = self.nu(&nodes[t], &nodes[t + 1], &u[t]);
            deformation += dt * self.model.metric(&u[t]);
            template += dt / self.model.sigma2() * g.inner(&nu, &nu);
            nus.push(nu);
        }
        EnergyParts {
            deformation,
            template,
            nu: nus,
        }
    }

    /// `(Jᵀ y)_s` for the interior nodes, where `J` maps interior images to `ν`.
    fn nu_adjoint(&self, u: &[VectorField], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let dt = self.dt();
        (1..self.steps)
            .map(|s| {
                let a_prev = self.model.transport_adjoint(&u[s - 1], &y[s - 1]);
                let a_cur = self.model.transport_adjoint(&u[s], &y[s]);
                (0..self.len())
                    .map(|i| (y[s - 1][i] - y[s][i]) / dt + 0.5 * (a_prev[i] + a_cur[i]))
                    .collect()
            })
            .collect()
    }

    fn grad_u(&self, nodes: &[Vec<f64>], u: &VectorField, nu: &[f64], t: usize) -> VectorField {
        let w = self.dt() * self.model.grid().cell_volume();
        let c = 2.0 / self.model.sigma2();
        let lu = self.model.operator().apply_l_vec(u);
        let b = self.model.transport_adjoint_velocity(&Self::midpoint(&nodes[t], &nodes[t + 1]), nu);
        let comp = |k: usize| (0..nu.len()).map(|i| w * (2.0 * lu[k][i] + c * b[k][i])).collect();
        [comp(0), comp(1)]
    }

    fn grad_nodes(&self, u: &[VectorField], nu: &[Vec<f64>]) -> Vec<f64> {
        let w = 2.0 * self.dt() * self.model.grid().cell_volume() / self.model.sigma2();
        self.nu_adjoint(u, nu).into_iter().flatten().map(|v| w * v).collect()
    }

    /// Energy and gradient in all free coordinates (see [`GridBvp::pack`]).
    pub fn energy_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dof() {
            return Err(Error::ShapeMismatch {
                expected: self.dof().to_string(),
                got: x.len().to_string(),
            });
        }
        let (nodes, u) = self.unpack(x);
        let parts = self.energy_parts(&nodes, &u);
        let mut grad = self.grad_nodes(&u, &parts.nu);
        for t in 0..self.steps {
            let gu = self.grad_u(&nodes, &u[t], &parts.nu[t], t);
            grad.extend(gu[0].iter().chain(&gu[1]));
        }
        Ok((parts.total(), grad))
    }

    /// Stationarity measure `√(Σ g² / (Δt·h^d))`.
    pub fn gradient_norm(&self, grad: &[f64]) -> f64 {
        let w = self.dt() * self.model.grid().cell_volume();
        (grad.iter().map(|g| g * g).sum::<f64>() / w).sqrt()
    }

    /// Optimal `u_t` for fixed images:
    /// `(L + (1/σ²)B*B) u = −(1/σ²)B*d` with `B u = A_u(n̄_t)`.
    pub fn solve_velocity(
        &self,
        a: &[f64],
        b: &[f64],
        warm: &VectorField,
        opts: &MatchOptions,
    ) -> VectorField {
        let model = self.model;
        let g = model.grid();
        let n = g.len();
        let dt = self.dt();
        let is2 = 1.0 / model.sigma2();
        let nbar = Self::midpoint(a, b);
        let d: Vec<f64> = (0..n).map(|i| (b[i] - a[i]) / dt).collect();
        let split = |v: &[f64]| -> VectorField { [v[..n].to_vec(), v[n..].to_vec()] };
        let join = |f: VectorField| -> Vec<f64> {
            let [mut x, y] = f;
            x.extend(y);
            x
        };
        let rhs = join(model.transport_adjoint_velocity(&nbar, &d));
        let rhs: Vec<f64> = rhs.iter().map(|v| -is2 * v).collect();
        let apply = |v: &[f64]| {
            let u = split(v);
            let lu = model.operator().apply_l_vec(&u);
            let bu = model.transport(&u, &nbar);
            let bbu = model.transport_adjoint_velocity(&nbar, &bu);
            let mut out = Vec::with_capacity(2 * n);
            for k in 0..2 {
                out.extend((0..n).map(|i| lu[k][i] + is2 * bbu[k][i]));
            }
            out
        };
        let (c0, c2) = match model.mode() {
            super::GridMode::Image => {
                let [gx, gy] = g.gradient(&nbar);
                (is2 * (0..n).map(|i| gx[i] * gx[i] + gy[i] * gy[i]).sum::<f64>() / n as f64, 0.0)
            }
            super::GridMode::Density => (0.0, is2 * nbar.iter().map(|v| v * v).sum::<f64>() / n as f64),
        };
        let op = model.operator();
        let precond = |r: &[f64]| {
            let sym = |kx: f64, ky: f64| 1.0 / (op.symbol(kx, ky) + c0 + c2 * (kx * kx + ky * ky));
            let x = g.apply_symbol(&r[..n], sym);
            let y = if g.dim() == 2 { g.apply_symbol(&r[n..], sym) } else { vec![0.0; n] };
            join([x, y])
        };
        let x0 = join(warm.clone());
        let rep = conjugate_gradient(apply, precond, &rhs, x0, opts.inner_tol, opts.inner_max_iter);
        split(&rep.x)
    }

    pub fn solve_velocities(&self, nodes: &[Vec<f64>], warm: &[VectorField], opts: &MatchOptions) -> Vec<VectorField> {
        (0..self.steps)
            .map(|t| self.solve_velocity(&nodes[t], &nodes[t + 1], &warm[t], opts))
            .collect()
    }

    /// Optimal interior images for fixed velocities (normal equations of the
    /// time-coupled least-squares problem in `ν`).
    pub fn solve_images(&self, u: &[VectorField], warm: &[Vec<f64>], opts: &MatchOptions) -> Vec<Vec<f64>> {
        let n = self.len();
        let zero = vec![0.0; n];
        // ν for given interior images with zero endpoints.
        let forward = |x: &[f64]| -> Vec<Vec<f64>> {
            let node = |k: usize| if k == 0 || k == self.steps { &zero[..] } else { &x[(k - 1) * n..k * n] };
            (0..self.steps).map(|t| self.nu(node(t), node(t + 1), &u[t])).collect()
        };
        let apply = |x: &[f64]| -> Vec<f64> { self.nu_adjoint(u, &forward(x)).into_iter().flatten().collect() };
        let mut base = vec![zero.clone(); self.steps + 1];
        base[0] = self.n0.clone();
        base[self.steps] = self.n1.clone();
        let r0: Vec<Vec<f64>> = (0..self.steps).map(|t| self.nu(&base[t], &base[t + 1], &u[t])).collect();
        let rhs: Vec<f64> = self.nu_adjoint(u, &r0).into_iter().flatten().map(|v| -v).collect();
        let precond = |r: &[f64]| self.time_precondition(r);
        let x0: Vec<f64> = warm[1..self.steps].iter().flatten().copied().collect();
        let rep = conjugate_gradient(apply, precond, &rhs, x0, opts.inner_tol, opts.inner_max_iter);
        self.nodes_from(&rep.x)
    }

    /// Inverse of `Δt⁻²` times the Dirichlet second difference in time, per
    /// pixel; exact for the image update when `u = 0`.
    fn time_precondition(&self, r: &[f64]) -> Vec<f64> {
        let n = self.len();
        let m = self.steps - 1;
        let dt = self.dt();
        let mut out = vec![0.0; r.len()];
        let mut cp = vec![0.0; m];
        let mut dp = vec![0.0; m];
        for i in 0..n {
            for k in 0..m {
                let rhs = r[k * n + i] * dt * dt;
                if k == 0 {
                    cp[0] = -0.5;
                    dp[0] = rhs / 2.0;
                } else {
                    let den = 2.0 + cp[k - 1];
                    cp[k] = -1.0 / den;
                    dp[k] = (rhs + dp[k - 1]) / den;
                }
            }
            let mut next = 0.0;
            for k in (0..m).rev() {
                next = dp[k] - cp[k] * next;
                out[k * n + i] = next;
            }
        }
        out
    }

    /// Reduced energy `min_u E` over the interior images, its gradient, and the optimal velocities.
    pub fn reduced(&self, interior: &[f64], warm: &[VectorField], opts: &MatchOptions) -> (f64, Vec<f64>, Vec<VectorField>) {
        let nodes = self.nodes_from(interior);
        let u = self.solve_velocities(&nodes, warm, opts);
        let parts = self.energy_parts(&nodes, &u);
        let g = self.grad_nodes(&u, &parts.nu);
        (parts.total(), g, u)
    }

    fn finish(&self, nodes: Vec<Vec<f64>>, u: Vec<VectorField>, history: Vec<f64>, iterations: usize) -> GridPath {
        let parts = self.energy_parts(&nodes, &u);
        let (_, grad) = self.energy_grad(&self.pack(&nodes, &u)).expect("consistent layout");
        let s2 = self.model.sigma2();
        GridPath {
            dt: self.dt(),
            momenta: parts.nu.iter().map(|v| v.iter().map(|x| x / s2).collect()).collect(),
            energy: parts.total(),
            deformation_energy: parts.deformation,
            template_energy: parts.template,
            grad_norm: self.gradient_norm(&grad),
            images: nodes,
            velocities: u,
            history,
            iterations,
        }
    }
}

struct Reduced<'a, 'b> {
    bvp: &'b GridBvp<'a>,
    warm: Vec<VectorField>,
    opts: &'b MatchOptions,
}

impl Objective for Reduced<'_, '_> {
    fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        let (e, g, u) = self.bvp.reduced(x, &self.warm, self.opts);
        self.warm = u;
        (e, g)
    }

    fn precondition(&self, v: &mut [f64]) -> bool {
        let p = self.bvp.time_precondition(v);
        v.copy_from_slice(&p);
        true
    }
}

/// Minimizes the path energy between `n0` and `n1`.
///
/// Returns [`Error::NonConvergence`] when the stationarity measure stays
/// above `opts.tol·(1 + E)`.
pub fn match_bvp(model: &GridModel, n0: &[f64], n1: &[f64], opts: &MatchOptions) -> Result<GridPath> {
    let bvp = GridBvp::new(model, n0, n1, opts.timesteps)?;
    let mut nodes = bvp.linear_fade();
    let mut u = vec![model.zero_field(); bvp.steps()];
    let mut history = vec![bvp.energy_parts(&nodes, &u).total()];
    let mut iterations = 0;
    for _ in 0..opts.sweeps {
        iterations += 1;
        u = bvp.solve_velocities(&nodes, &u, opts);
        nodes = bvp.solve_images(&u, &nodes, opts);
        let e = bvp.energy_parts(&nodes, &u).total();
        let prev = *history.last().expect("non-empty");
        history.push(e);
        if prev - e <= 1e-12 * (1.0 + e) {
            break;
        }
    }

    let w = (bvp.dt() * model.grid().cell_volume()).sqrt();
    let lbfgs = LbfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: 0.5 * opts.tol * w,
        ..Default::default()
    };
    let n = model.grid().len();
    let x0: Vec<f64> = nodes[1..bvp.steps()].iter().flatten().copied().collect();
    let mut obj = Reduced {
        bvp: &bvp,
        warm: u,
        opts,
    };
    let rep = minimize(&mut obj, x0, &lbfgs);
    let warm = obj.warm;
    iterations += rep.iterations;
    history.extend(rep.history.iter().skip(1));
    nodes = bvp.nodes_from(&rep.x);
    debug_assert_eq!(nodes[1].len(), n);
    let u = bvp.solve_velocities(&nodes, &warm, opts);
    let path = bvp.finish(nodes, u, history, iterations);
    if path.grad_norm > opts.tol * (1.0 + path.energy.abs()) {
        return Err(Error::NonConvergence {
            iterations: path.iterations,
            residual: path.grad_norm,
        });
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::super::GridMode;
    use super::*;
    use crate::spectral::PeriodicGrid;

    #[test]
    fn identical_endpoints_have_zero_energy() {
        let m = GridModel::new(PeriodicGrid::unit(2, 8).unwrap(), 2, 0.01, GridMode::Image, 0.1).unwrap();
        let n: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = match_bvp(&m, &n, &n, &MatchOptions::default()).unwrap();
        assert!(p.energy < 1e-20);
        assert!(p.velocities.iter().flatten().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_single_step() {
        let m = GridModel::new(PeriodicGrid::unit(2, 8).unwrap(), 2, 0.01, GridMode::Density, 0.1).unwrap();
        let n = vec![1.0; 64];
        assert!(GridBvp::new(&m, &n, &n, 1).is_err());
        assert!(GridBvp::new(&m, &n, &n[..10], 4).is_err());
    }
}
