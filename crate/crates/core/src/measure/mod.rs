//! Matching weighted point sets with paths of point measures.
//!
//! The path is `n_t = Σ α_k(t) δ_{x_k(t)} + Σ β_k(t) δ_{y_k(t)}`, optionally
//! plus fixed-grid particles with free weights standing in for an
//! absolutely continuous part. Velocities are `u_t = Σ_a K_g(·, P̄_a) c_a`
//! over the union of particle midpoints on each interval; the template
//! velocity pairs with `f ∈ H` as
//!
//! ```text
//! ⟨ν, f⟩ = Σ_a s_a f(P̄_a) + v_a·∇f(P̄_a),   s_a = ẇ_a,   v_a = w̄_a(Ṗ_a − u(P̄_a))
//! ```
//!
//! and the path energy is `Σ_t Δt [‖u_t‖²_g + ‖ν_t‖²_N / σ²]`. Positions and
//! weights are linear on each interval, whose energy is integrated by
//! three-point Gauss-Legendre quadrature; every node carries its own momenta.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure_positive, Error, Result};
use crate::io::Table;
use crate::kernels::{KernelSpec, Vec2};
use crate::optim::{minimize, FnObjective, LbfgsOptions};

/// `(τ, weight)` of the Gauss-Legendre rule on `[0, 1]`.
const GAUSS: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];
/// Quadrature nodes per interval, each with its own momenta.
pub const NODES: usize = GAUSS.len();

/// `Σ w_k δ_{p_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMeasure {
    pub weights: Vec<f64>,
    pub points: Vec<Vec2>,
}

impl PointMeasure {
    pub fn new(weights: Vec<f64>, points: Vec<Vec2>) -> Result<Self> {
        if weights.len() != points.len() || weights.is_empty() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} non-empty weights and points", points.len()),
                got: weights.len().to_string(),
            });
        }
        if weights.iter().chain(points.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "measure",
                reason: "weights and coordinates must be finite".into(),
            });
        }
        Ok(Self { weights, points })
    }

    pub fn dirac(weight: f64, point: Vec2) -> Self {
        Self {
            weights: vec![weight],
            points: vec![point],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn translate(&self, shift: Vec2) -> Self {
        Self {
            weights: self.weights.clone(),
            points: self.points.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect(),
        }
    }

    /// Point of weighted (by `|w|`) mean position.
    pub fn centroid(&self) -> Vec2 {
        let total: f64 = self.weights.iter().map(|w| w.abs()).sum();
        if total == 0.0 {
            let n = self.len() as f64;
            return self.points.iter().fold([0.0; 2], |c, p| [c[0] + p[0] / n, c[1] + p[1] / n]);
        }
        self.points
            .iter()
            .zip(&self.weights)
            .fold([0.0; 2], |c, (p, w)| [c[0] + w.abs() * p[0] / total, c[1] + w.abs() * p[1] / total])
    }

    /// Columns `weight, x` or `weight, x, y`.
    pub fn to_table(&self, dim: usize) -> Table {
        let mut t = Table::new(if dim == 1 { vec!["weight", "x"] } else { vec!["weight", "x", "y"] });
        for (w, p) in self.weights.iter().zip(&self.points) {
            let mut row = vec![*w];
            row.extend_from_slice(&p[..dim]);
            t.push(row);
        }
        t
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        let w = table
            .column("weight")
            .ok_or_else(|| Error::Parse("missing column weight".into()))?;
        let x = table.column("x").ok_or_else(|| Error::Parse("missing column x".into()))?;
        let y = table.column("y").unwrap_or_else(|| vec![0.0; x.len()]);
        Self::new(w, x.iter().zip(&y).map(|(a, b)| [*a, *b]).collect())
    }
}

fn interpolate(p0: &[Vec2], p1: &[Vec2], w0: &[f64], w1: &[f64], tau: f64) -> (Vec<Vec2>, Vec<f64>) {
    let pts = p0
        .iter()
        .zip(p1)
        .map(|(a, b)| [a[0] + tau * (b[0] - a[0]), a[1] + tau * (b[1] - a[1])])
        .collect();
    let w = w0.iter().zip(w1).map(|(a, b)| a + tau * (b - a)).collect();
    (pts, w)
}

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `‖ν‖²_N` for `⟨ν, f⟩ = Σ s_a f(p_a) + v_a·∇f(p_a)`, in closed form through
/// `K_H`, `∇₂K_H`, `∇₁K_H` and `∇₁∇₂ᵀK_H`.
pub fn dual_norm_sq(kernel: &KernelSpec, points: &[Vec2], rates: &[f64], defects: &[Vec2]) -> Result<f64> {
    kernel.require_order(2)?;
    if rates.len() != points.len() || defects.len() != points.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rates and defects", points.len()),
            got: format!("{} and {}", rates.len(), defects.len()),
        });
    }
    Ok(DualNormExpansion::new(kernel, points)?.value(rates, defects))
}

/// The quadratic form `‖ν‖²_N` as a symmetric matrix over per-particle
/// blocks `(s_a, v_a)`.
#[derive(Debug, Clone)]
pub struct DualNormExpansion {
    dim: usize,
    size: usize,
    matrix: Vec<f64>,
}

impl DualNormExpansion {
    pub fn new(kernel: &KernelSpec, points: &[Vec2]) -> Result<Self> {
        kernel.require_order(2)?;
        let dim = kernel.dim;
        let block = 1 + dim;
        let size = block * points.len();
        let mut matrix = vec![0.0; size * size];
        for (a, pa) in points.iter().enumerate() {
            for (b, pb) in points.iter().enumerate() {
                let k = kernel.value(pa, pb);
                let g2 = kernel.grad_second(pa, pb);
                let g1 = kernel.grad_first(pa, pb);
                let h = kernel.cross_hessian(pa, pb);
                let (ra, rb) = (a * block, b * block);
                matrix[ra * size + rb] = k;
                for i in 0..dim {
                    matrix[ra * size + rb + 1 + i] = g2[i];
                    matrix[(ra + 1 + i) * size + rb] = g1[i];
                    for j in 0..dim {
                        matrix[(ra + 1 + i) * size + rb + 1 + j] = h[i][j];
                    }
                }
            }
        }
        Ok(Self { dim, size, matrix })
    }

    /// Row-major matrix of size `(1 + dim)·n`.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn value(&self, rates: &[f64], defects: &[Vec2]) -> f64 {
        let block = 1 + self.dim;
        let mut z = vec![0.0; self.size];
        for (a, (s, v)) in rates.iter().zip(defects).enumerate() {
            z[a * block] = *s;
            z[a * block + 1..(a + 1) * block].copy_from_slice(&v[..self.dim]);
        }
        let mut total = 0.0;
        for i in 0..self.size {
            let row = &self.matrix[i * self.size..(i + 1) * self.size];
            total += z[i] * row.iter().zip(&z).map(|(m, x)| m * x).sum::<f64>();
        }
        total
    }
}

/// Node and interval values of a discrete particle path.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticlePath {
    pub dt: f64,
    /// `alpha[t][k]`, `T + 1` nodes.
    pub alpha: Vec<Vec<f64>>,
    pub x: Vec<Vec<Vec2>>,
    pub beta: Vec<Vec<f64>>,
    pub y: Vec<Vec<Vec2>>,
    /// Weights of the fixed-grid particles (empty rows when disabled).
    pub aux_weights: Vec<Vec<f64>>,
    /// `c[NODES·t + q][a]` at Gauss node `q` of interval `t`, over sources, then
    /// targets, then grid particles.
    pub c: Vec<Vec<Vec2>>,
}

impl ParticlePath {
    pub fn timesteps(&self) -> usize {
        self.alpha.len() - 1
    }

    /// Long format `t, group, index, weight, x, y` (group 0 sources, 1
    /// targets, 2 grid particles).
    pub fn to_table(&self, aux_points: &[Vec2]) -> Table {
        let mut tab = Table::new(["t", "group", "index", "weight", "x", "y"]);
        for t in 0..self.alpha.len() {
            let time = t as f64 * self.dt;
            for (k, (w, p)) in self.alpha[t].iter().zip(&self.x[t]).enumerate() {
                tab.push(vec![time, 0.0, k as f64, *w, p[0], p[1]]);
            }
            for (k, (w, p)) in self.beta[t].iter().zip(&self.y[t]).enumerate() {
                tab.push(vec![time, 1.0, k as f64, *w, p[0], p[1]]);
            }
            for (k, (w, p)) in self.aux_weights[t].iter().zip(aux_points).enumerate() {
                tab.push(vec![time, 2.0, k as f64, *w, p[0], p[1]]);
            }
        }
        tab
    }
}

/// Energy split of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureEnergy {
    pub total: f64,
    pub deformation: f64,
    pub template: f64,
}

/// The matching problem between two point measures on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct MeasureProblem {
    pub kernel_g: KernelSpec,
    pub kernel_h: KernelSpec,
    pub sigma2: f64,
    pub steps: usize,
    pub source: PointMeasure,
    pub target: PointMeasure,
    /// Fixed positions of the grid particles; empty by default.
    pub aux_points: Vec<Vec2>,
}

struct IntervalEval {
    deformation: f64,
    template: f64,
    /// Relative mismatch between `u` and `K_g(w̄ ∇f)` at the particles.
    horizontality: f64,
    grad_p0: Vec<Vec2>,
    grad_p1: Vec<Vec2>,
    grad_w0: Vec<f64>,
    grad_w1: Vec<f64>,
}

impl MeasureProblem {
    pub fn new(
        kernel_g: KernelSpec,
        kernel_h: KernelSpec,
        sigma2: f64,
        steps: usize,
        source: PointMeasure,
        target: PointMeasure,
    ) -> Result<Self> {
        ensure_positive("sigma2", sigma2)?;
        if steps < 2 {
            return Err(Error::InvalidParameter {
                name: "timesteps",
                reason: format!("need at least 2 intervals, got {steps}"),
            });
        }
        if kernel_g.dim != kernel_h.dim {
            return Err(Error::InvalidParameter {
                name: "kernel",
                reason: "K_g and K_H must share the dimension".into(),
            });
        }
        kernel_g.require_order(3)?;
        kernel_h.require_order(3)?;
        if source.is_empty() || target.is_empty() {
            return Err(Error::InvalidParameter {
                name: "measure",
                reason: "both measures need at least one particle".into(),
            });
        }
        Ok(Self {
            kernel_g,
            kernel_h,
            sigma2,
            steps,
            source,
            target,
            aux_points: Vec::new(),
        })
    }

    /// Adds fixed grid particles standing in for an absolutely continuous part.
    pub fn with_aux_points(mut self, points: Vec<Vec2>) -> Self {
        self.aux_points = points;
        self
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    fn counts(&self) -> (usize, usize, usize) {
        (self.source.len(), self.target.len(), self.aux_points.len())
    }

    fn particles(&self) -> usize {
        let (q, r, j) = self.counts();
        q + r + j
    }

    pub fn dof(&self) -> usize {
        let (q, r, _) = self.counts();
        let d = self.kernel_g.dim;
        let n = self.particles();
        let t = self.steps;
        (t - 1) * n + t * (q + r) * d
    }

    /// Free variables: interior weights of every particle, then source
    /// positions for `t = 1..T`, target positions for `t = 0..T−1`. The
    /// momenta `c` are not free; see [`unpack`](Self::unpack).
    pub fn pack(&self, path: &ParticlePath) -> Vec<f64> {
        let d = self.kernel_g.dim;
        let t = self.steps;
        let mut x = Vec::with_capacity(self.dof());
        for k in 1..t {
            x.extend(&path.alpha[k]);
            x.extend(&path.beta[k]);
            x.extend(&path.aux_weights[k]);
        }
        for k in 1..=t {
            path.x[k].iter().for_each(|p| x.extend(&p[..d]));
        }
        for k in 0..t {
            path.y[k].iter().for_each(|p| x.extend(&p[..d]));
        }
        x
    }

    /// Rebuilds the path from its free variables, with the energy-minimizing
    /// momenta on every interval.
    pub fn unpack(&self, v: &[f64]) -> ParticlePath {
        let (q, r, j) = self.counts();
        let d = self.kernel_g.dim;
        let t = self.steps;
        let n = q + r + j;
        let (weights, rest) = v.split_at((t - 1) * n);
        let mut it = rest.iter().copied();
        let mut take_points = |count: usize| -> Vec<Vec2> {
            (0..count)
                .map(|_| {
                    let mut p = [0.0; 2];
                    for c in p.iter_mut().take(d) {
                        *c = it.next().expect("vector matches layout");
                    }
                    p
                })
                .collect()
        };
        let xs: Vec<Vec<Vec2>> = (0..t).map(|_| take_points(q)).collect();
        let ys: Vec<Vec<Vec2>> = (0..t).map(|_| take_points(r)).collect();
        let weights: Vec<&[f64]> = weights.chunks(n).collect();

        let mut alpha = vec![self.source.weights.clone()];
        let mut beta = vec![vec![0.0; r]];
        let mut aux = vec![vec![0.0; j]];
        for w in &weights {
            alpha.push(w[..q].to_vec());
            beta.push(w[q..q + r].to_vec());
            aux.push(w[q + r..].to_vec());
        }
        alpha.push(vec![0.0; q]);
        beta.push(self.target.weights.clone());
        aux.push(vec![0.0; j]);
        let mut x = vec![self.source.points.clone()];
        x.extend(xs);
        let mut y = ys;
        y.push(self.target.points.clone());
        let mut path = ParticlePath {
            dt: self.dt(),
            alpha,
            x,
            beta,
            y,
            aux_weights: aux,
            c: Vec::new(),
        };
        let nodes: Vec<_> = (0..=t).map(|k| self.node(&path, k)).collect();
        path.c = (0..NODES * t)
            .map(|i| {
                let k = i / NODES;
                self.optimal_momenta(&nodes[k].0, &nodes[k + 1].0, &nodes[k].1, &nodes[k + 1].1, GAUSS[i % NODES].0)
            })
            .collect();
        path
    }

    /// Minimizes the interval energy over `c`. Stationarity reads
    /// `c = w̄ ∇f / σ²`, i.e. `(I + W H W G / σ²) c = W(K_vs s + H W V) / σ²`
    /// with `G` the `K_g` Gram matrix and `H` the defect block of `K_H`;
    /// both are PSD so the matrix is invertible.
    fn optimal_momenta(&self, p0: &[Vec2], p1: &[Vec2], w0: &[f64], w1: &[f64], tau: f64) -> Vec<Vec2> {
        let n = p0.len();
        let d = self.kernel_g.dim;
        let dt = self.dt();
        let (mid, wbar) = interpolate(p0, p1, w0, w1, tau);
        let m = n * d;
        let mut g = DMatrix::<f64>::zeros(m, m);
        let mut wh = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for a in 0..n {
            for b in 0..n {
                let off = self.kernel_g.offset(&mid[a], &mid[b]);
                let k = self.kernel_g.value_at(off);
                let pd = self.kernel_h.derivs_at(off);
                let s_b = (w1[b] - w0[b]) / dt;
                for i in 0..d {
                    g[(a * d + i, b * d + i)] = k;
                    let mut r = s_b * pd.grad[i];
                    for j in 0..d {
                        let v_bj = wbar[b] * (p1[b][j] - p0[b][j]) / dt;
                        r -= pd.hess[i][j] * v_bj;
                        wh[(a * d + i, b * d + j)] = -wbar[a] * pd.hess[i][j] * wbar[b] / self.sigma2;
                    }
                    rhs[a * d + i] += wbar[a] * r / self.sigma2;
                }
            }
        }
        let system = DMatrix::<f64>::identity(m, m) + wh * g;
        let c = system.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(m));
        (0..n)
            .map(|a| {
                let mut p = [0.0; 2];
                p[..d].copy_from_slice(&c.as_slice()[a * d..(a + 1) * d]);
                p
            })
            .collect()
    }

    /// Linear weight fades, straight lines towards the weighted centroid of
    /// the other measure, zero momenta.
    pub fn initial_path(&self) -> ParticlePath {
        let t = self.steps;
        let (q, r, j) = self.counts();
        let to = self.target.centroid();
        let from = self.source.centroid();
        let lerp = |a: Vec2, b: Vec2, s: f64| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        let mut path = ParticlePath {
            dt: self.dt(),
            alpha: Vec::new(),
            x: Vec::new(),
            beta: Vec::new(),
            y: Vec::new(),
            aux_weights: vec![vec![0.0; j]; t + 1],
            c: vec![vec![[0.0; 2]; q + r + j]; NODES * t],
        };
        for k in 0..=t {
            let s = k as f64 / t as f64;
            path.alpha.push(self.source.weights.iter().map(|w| (1.0 - s) * w).collect());
            path.beta.push(self.target.weights.iter().map(|w| s * w).collect());
            path.x.push(self.source.points.iter().map(|p| lerp(*p, to, s)).collect());
            path.y.push(self.target.points.iter().map(|p| lerp(from, *p, s)).collect());
        }
        path
    }

    fn node(&self, path: &ParticlePath, t: usize) -> (Vec<Vec2>, Vec<f64>) {
        let mut pts = path.x[t].clone();
        pts.extend(&path.y[t]);
        pts.extend(&self.aux_points);
        let mut w = path.alpha[t].clone();
        w.extend(&path.beta[t]);
        w.extend(&path.aux_weights[t]);
        (pts, w)
    }

    /// Energy density `‖u‖² + ‖ν‖²_N/σ²` at time `τ` inside one interval and
    /// its gradient with respect to the interval end nodes, scaled by `Δt`.
    #[allow(clippy::too_many_arguments)]
    fn interval(&self, p0: &[Vec2], p1: &[Vec2], w0: &[f64], w1: &[f64], c: &[Vec2], tau: f64) -> IntervalEval {
        let n = p0.len();
        let dim = self.kernel_g.dim;
        let dt = self.dt();
        let s2 = self.sigma2;
        let kg = &self.kernel_g;
        let kh = &self.kernel_h;
        let (mid, wbar) = interpolate(p0, p1, w0, w1, tau);
        let vel: Vec<Vec2> = (0..n)
            .map(|a| [(p1[a][0] - p0[a][0]) / dt, (p1[a][1] - p0[a][1]) / dt])
            .collect();
        let s: Vec<f64> = (0..n).map(|a| (w1[a] - w0[a]) / dt).collect();
        let off = |a: usize, b: usize| kg.offset(&mid[a], &mid[b]);

        let mut g = vec![0.0; n * n];
        let mut dg = vec![[0.0; 2]; n * n];
        for a in 0..n {
            for b in 0..n {
                let d = off(a, b);
                g[a * n + b] = kg.value_at(d);
                dg[a * n + b] = kg.grad_at(d);
            }
        }
        let u: Vec<Vec2> = (0..n)
            .map(|a| {
                (0..n).fold([0.0; 2], |acc, b| {
                    [acc[0] + g[a * n + b] * c[b][0], acc[1] + g[a * n + b] * c[b][1]]
                })
            })
            .collect();
        let v: Vec<Vec2> = (0..n)
            .map(|a| [wbar[a] * (vel[a][0] - u[a][0]), wbar[a] * (vel[a][1] - u[a][1])])
            .collect();
        let deformation: f64 = (0..n).map(|a| dot(c[a], u[a])).sum();

        let derivs: Vec<_> = (0..n * n).map(|ab| kh.derivs_at(off(ab / n, ab % n))).collect();
        let mut f = vec![0.0; n];
        let mut gf = vec![[0.0; 2]; n];
        for a in 0..n {
            for b in 0..n {
                let pd = &derivs[a * n + b];
                f[a] += s[b] * pd.value - dot(pd.grad, v[b]);
                for i in 0..dim {
                    let hv: f64 = (0..dim).map(|j| pd.hess[i][j] * v[b][j]).sum();
                    gf[a][i] += s[b] * pd.grad[i] - hv;
                }
            }
        }
        let norm: f64 = (0..n).map(|a| s[a] * f[a] + dot(v[a], gf[a])).sum();
        let template = norm / s2;

        // ∂e/∂(s, v, P̄, w̄, V, c) with e = D + N/σ².
        let ds: Vec<f64> = f.iter().map(|x| 2.0 * x / s2).collect();
        let dv: Vec<Vec2> = gf.iter().map(|x| [2.0 * x[0] / s2, 2.0 * x[1] / s2]).collect();
        let mut dmid = vec![[0.0; 2]; n];
        for a in 0..n {
            for b in 0..n {
                let pd = &derivs[a * n + b];
                let third = kh.third_at(off(a, b));
                let cc = dot(c[a], c[b]);
                for k in 0..dim {
                    let mut dn = s[a] * s[b] * pd.grad[k];
                    for i in 0..dim {
                        dn += -s[a] * pd.hess[k][i] * v[b][i] + s[b] * pd.hess[k][i] * v[a][i];
                        for j in 0..dim {
                            dn -= third[i][j][k] * v[a][i] * v[b][j];
                        }
                    }
                    dmid[a][k] += 2.0 * dn / s2 + 2.0 * cc * dg[a * n + b][k];
                }
                let gc = dot(dv[a], c[b]);
                for k in 0..dim {
                    let t = wbar[a] * gc * dg[a * n + b][k];
                    dmid[a][k] -= t;
                    dmid[b][k] += t;
                }
            }
        }
        let mut out = IntervalEval {
            deformation,
            template,
            horizontality: 0.0,
            grad_p0: vec![[0.0; 2]; n],
            grad_p1: vec![[0.0; 2]; n],
            grad_w0: vec![0.0; n],
            grad_w1: vec![0.0; n],
        };
        for a in 0..n {
            let dw = dot([vel[a][0] - u[a][0], vel[a][1] - u[a][1]], dv[a]);
            out.grad_w0[a] = dt * ((1.0 - tau) * dw - ds[a] / dt);
            out.grad_w1[a] = dt * (tau * dw + ds[a] / dt);
            for k in 0..dim {
                let dvel = wbar[a] * dv[a][k];
                out.grad_p0[a][k] = dt * ((1.0 - tau) * dmid[a][k] - dvel / dt);
                out.grad_p1[a][k] = dt * (tau * dmid[a][k] + dvel / dt);
            }
        }
        // u against K_g(w̄ ∇f) at the particles, ∇f = G/σ².
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for a in 0..n {
            let mut target = [0.0; 2];
            for b in 0..n {
                for k in 0..dim {
                    target[k] += g[a * n + b] * wbar[b] * gf[b][k] / s2;
                }
            }
            worst = worst.max((u[a][0] - target[0]).hypot(u[a][1] - target[1]));
            scale = scale.max(u[a][0].hypot(u[a][1])).max(target[0].hypot(target[1]));
        }
        out.horizontality = if scale <= 1e-300 { 0.0 } else { worst / scale };
        out
    }

    fn evaluate(&self, path: &ParticlePath, want_grad: bool) -> (Vec<IntervalEval>, Option<Vec<f64>>) {
        let t = self.steps;
        let (q, r, j) = self.counts();
        let n = q + r + j;
        let d = self.kernel_g.dim;
        let nodes: Vec<_> = (0..=t).map(|k| self.node(path, k)).collect();
        let evals: Vec<IntervalEval> = (0..NODES * t)
            .map(|i| {
                let k = i / NODES;
                self.interval(&nodes[k].0, &nodes[k + 1].0, &nodes[k].1, &nodes[k + 1].1, &path.c[i], GAUSS[i % NODES].0)
            })
            .collect();
        if !want_grad {
            return (evals, None);
        }
        let mut gw = vec![vec![0.0; n]; t + 1];
        let mut gp = vec![vec![[0.0; 2]; n]; t + 1];
        for (idx, e) in evals.iter().enumerate() {
            let (k, wq) = (idx / NODES, GAUSS[idx % NODES].1);
            for a in 0..n {
                gw[k][a] += wq * e.grad_w0[a];
                gw[k + 1][a] += wq * e.grad_w1[a];
                for i in 0..2 {
                    gp[k][a][i] += wq * e.grad_p0[a][i];
                    gp[k + 1][a][i] += wq * e.grad_p1[a][i];
                }
            }
        }
        let mut g = Vec::with_capacity(self.dof());
        for row in gw.iter().take(t).skip(1) {
            g.extend(row);
        }
        for row in gp.iter().skip(1) {
            row[..q].iter().for_each(|p| g.extend(&p[..d]));
        }
        for row in gp.iter().take(t) {
            row[q..q + r].iter().for_each(|p| g.extend(&p[..d]));
        }
        (evals, Some(g))
    }

    pub fn check_path(&self, path: &ParticlePath) -> Result<()> {
        let t = self.steps;
        let (q, r, j) = self.counts();
        let bad = path.alpha.len() != t + 1
            || path.x.len() != t + 1
            || path.beta.len() != t + 1
            || path.y.len() != t + 1
            || path.aux_weights.len() != t + 1
            || path.c.len() != NODES * t
            || path.alpha.iter().any(|w| w.len() != q)
            || path.x.iter().any(|w| w.len() != q)
            || path.beta.iter().any(|w| w.len() != r)
            || path.y.iter().any(|w| w.len() != r)
            || path.aux_weights.iter().any(|w| w.len() != j)
            || path.c.iter().any(|w| w.len() != q + r + j);
        if bad {
            return Err(Error::ShapeMismatch {
                expected: format!("{t} intervals over {q} + {r} + {j} particles"),
                got: "a path of another shape".into(),
            });
        }
        let boundary = path.alpha[0] == self.source.weights
            && path.alpha[t].iter().all(|w| *w == 0.0)
            && path.beta[0].iter().all(|w| *w == 0.0)
            && path.beta[t] == self.target.weights
            && path.x[0] == self.source.points
            && path.y[t] == self.target.points
            && path.aux_weights[0].iter().chain(&path.aux_weights[t]).all(|w| *w == 0.0);
        if !boundary {
            return Err(Error::InvalidParameter {
                name: "path",
                reason: "boundary conditions do not hold".into(),
            });
        }
        Ok(())
    }

    /// `Σ_t Δt [‖u_t‖² + ‖ν_t‖²_N/σ²]` with its split.
    pub fn path_energy(&self, path: &ParticlePath) -> Result<MeasureEnergy> {
        self.check_path(path)?;
        let (evals, _) = self.evaluate(path, false);
        Ok(self.sum(&evals))
    }

    fn sum(&self, evals: &[IntervalEval]) -> MeasureEnergy {
        let dt = self.dt();
        let quad = |f: &dyn Fn(&IntervalEval) -> f64| {
            dt * evals.iter().enumerate().map(|(i, e)| GAUSS[i % NODES].1 * f(e)).sum::<f64>()
        };
        let deformation = quad(&|e| e.deformation);
        let template = quad(&|e| e.template);
        MeasureEnergy {
            total: deformation + template,
            deformation,
            template,
        }
    }

    /// Energy and gradient over the packed free variables.
    pub fn energy_grad(&self, v: &[f64]) -> Result<(f64, Vec<f64>)> {
        if v.len() != self.dof() {
            return Err(Error::ShapeMismatch {
                expected: self.dof().to_string(),
                got: v.len().to_string(),
            });
        }
        let (evals, g) = self.evaluate(&self.unpack(v), true);
        Ok((self.sum(&evals).total, g.expect("gradient requested")))
    }

    /// Per-interval `‖u_t‖² + ‖ν_t‖²_N/σ²`.
    pub fn interval_energies(&self, path: &ParticlePath) -> Vec<f64> {
        let evals = self.evaluate(path, false).0;
        evals
            .chunks(NODES)
            .map(|pair| {
                pair.iter()
                    .zip(GAUSS)
                    .map(|(e, (_, w))| w * (e.deformation + e.template))
                    .sum()
            })
            .collect()
    }

    /// Largest relative mismatch of `u_t` against `K_g(w̄ ∇f_t)` over all
    /// intervals, the discrete form of `L_g u = ∇f ⊗ n`.
    pub fn stationarity_residual(&self, path: &ParticlePath) -> f64 {
        self.evaluate(path, false)
            .0
            .iter()
            .map(|e| e.horizontality)
            .fold(0.0, f64::max)
    }

    /// `√(Σ g²/Δt)`.
    pub fn gradient_norm(&self, g: &[f64]) -> f64 {
        (g.iter().map(|x| x * x).sum::<f64>() / self.dt()).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct MeasureMatchOptions {
    pub timesteps: usize,
    /// Stationarity tolerance relative to `1 + E`.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of starts; the first is the default initialization.
    pub restarts: usize,
    pub seed: u64,
    /// Size of the random perturbation of the later starts.
    pub perturbation: f64,
    /// Damped Newton steps after the quasi-Newton descent.
    pub newton_steps: usize,
}

impl Default for MeasureMatchOptions {
    fn default() -> Self {
        Self {
            timesteps: 10,
            tol: 1e-6,
            max_iter: 5000,
            restarts: 5,
            seed: 0,
            perturbation: 0.1,
            newton_steps: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeasureMatch {
    pub path: ParticlePath,
    pub energy: MeasureEnergy,
    /// Energy after every accepted step of the best start.
    pub history: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Final energy of every start, in start order.
    pub restart_energies: Vec<f64>,
    /// Whether each start met the gradient tolerance; only those compete.
    pub restart_converged: Vec<bool>,
    pub best_restart: usize,
    pub stationarity_residual: f64,
    pub interval_energies: Vec<f64>,
}

impl MeasureMatch {
    /// Columns `iteration, energy`.
    pub fn history_table(&self) -> Table {
        let mut t = Table::new(["iteration", "energy"]);
        for (i, e) in self.history.iter().enumerate() {
            t.push(vec![i as f64, *e]);
        }
        t
    }
}

struct Run {
    x: Vec<f64>,
    value: f64,
    history: Vec<f64>,
    iterations: usize,
}

/// Levenberg-Marquardt damped Newton steps on a central-difference Hessian
/// of the analytic gradient; only decreasing steps are taken.
fn newton_polish(problem: &MeasureProblem, run: &mut Run, tol: f64, max_steps: usize) {
    let n = run.x.len();
    let mut mu = 1e-8;
    for _ in 0..max_steps {
        let Ok((f, g)) = problem.energy_grad(&run.x) else { return };
        if problem.gradient_norm(&g) <= 0.1 * tol * (1.0 + f.abs()) {
            return;
        }
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut y = run.x.clone();
        for j in 0..n {
            let step = 1e-6 * (1.0 + run.x[j].abs());
            y[j] = run.x[j] + step;
            let Ok((_, gp)) = problem.energy_grad(&y) else { return };
            y[j] = run.x[j] - step;
            let Ok((_, gm)) = problem.energy_grad(&y) else { return };
            y[j] = run.x[j];
            for i in 0..n {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        let h = 0.5 * (&h + h.transpose());
        let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let rhs = DVector::from_iterator(n, g.iter().map(|v| -v));
        let mut improved = false;
        while mu <= 1e6 {
            let damped = &h + DMatrix::<f64>::identity(n, n) * (mu * scale);
            if let Some(chol) = damped.cholesky() {
                let d = chol.solve(&rhs);
                let trial: Vec<f64> = run.x.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
                if let Ok((ft, _)) = problem.energy_grad(&trial) {
                    if ft <= f {
                        run.x = trial;
                        run.value = ft;
                        run.history.push(ft);
                        run.iterations += 1;
                        mu = (mu * 0.1).max(1e-12);
                        improved = true;
                        break;
                    }
                }
            }
            mu *= 10.0;
        }
        if !improved {
            return;
        }
    }
}

/// Multi-start minimization of the path energy; starts run in parallel and
/// the lowest final energy wins.
pub fn match_measures(problem: &MeasureProblem, opts: &MeasureMatchOptions) -> Result<MeasureMatch> {
    if opts.restarts == 0 {
        return Err(Error::InvalidParameter {
            name: "restarts",
            reason: "need at least one start".into(),
        });
    }
    let mut problem = problem.clone();
    problem.steps = opts.timesteps;
    if problem.steps < 2 {
        return Err(Error::InvalidParameter {
            name: "timesteps",
            reason: format!("need at least 2 intervals, got {}", problem.steps),
        });
    }
    let base = problem.pack(&problem.initial_path());
    let lopts = LbfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: 0.1 * opts.tol * problem.dt().sqrt(),
        f_tol: 1e-16,
        ..Default::default()
    };
    let runs: Vec<Run> = (0..opts.restarts)
        .into_par_iter()
        .map(|i| {
            let mut x0 = base.clone();
            if i > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
                x0.iter_mut()
                    .for_each(|v| *v += rng.random_range(-opts.perturbation..=opts.perturbation));
            }
            let mut obj = FnObjective(|x: &[f64]| {
                problem
                    .energy_grad(x)
                    .unwrap_or_else(|_| (f64::INFINITY, vec![0.0; x.len()]))
            });
            let rep = minimize(&mut obj, x0, &lopts);
            let mut run = Run {
                x: rep.x,
                value: rep.value,
                history: rep.history,
                iterations: rep.iterations,
            };
            newton_polish(&problem, &mut run, opts.tol, opts.newton_steps);
            run
        })
        .collect();
    let grad_norms: Vec<f64> = runs
        .iter()
        .map(|r| {
            problem
                .energy_grad(&r.x)
                .map(|(_, g)| problem.gradient_norm(&g))
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let converged: Vec<bool> = runs
        .iter()
        .zip(&grad_norms)
        .map(|(r, g)| *g <= opts.tol * (1.0 + r.value.abs()))
        .collect();
    let Some(best) = (0..runs.len())
        .filter(|&i| converged[i])
        .min_by(|&a, &b| runs[a].value.total_cmp(&runs[b].value))
    else {
        let worst = (0..runs.len())
            .min_by(|&a, &b| grad_norms[a].total_cmp(&grad_norms[b]))
            .expect("at least one start");
        return Err(Error::NonConvergence {
            iterations: runs[worst].iterations,
            residual: grad_norms[worst],
        });
    };
    let run = &runs[best];
    let grad_norm = grad_norms[best];
    let path = problem.unpack(&run.x);
    Ok(MeasureMatch {
        energy: problem.path_energy(&path)?,
        stationarity_residual: problem.stationarity_residual(&path),
        interval_energies: problem.interval_energies(&path),
        history: run.history.clone(),
        grad_norm,
        iterations: run.iterations,
        restart_energies: runs.iter().map(|r| r.value).collect(),
        restart_converged: converged,
        best_restart: best,
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernels(dim: usize) -> (KernelSpec, KernelSpec) {
        (
            KernelSpec::gaussian(1.0, 1.0, dim).unwrap(),
            KernelSpec::gaussian(0.5, 1.0, dim).unwrap(),
        )
    }

    #[test]
    fn flow_transported_particle_has_zero_norm() {
        let (_, kh) = kernels(2);
        let n = dual_norm_sq(&kh, &[[0.3, -0.2]], &[0.0], &[[0.0, 0.0]]).unwrap();
        assert_eq!(n, 0.0);
    }

    #[test]
    fn weight_rate_reproduces_kernel() {
        let (_, kh) = kernels(2);
        let n = dual_norm_sq(&kh, &[[0.3, -0.2]], &[1.7], &[[0.0, 0.0]]).unwrap();
        assert!((n - 1.7 * 1.7 * kh.value(&[0.3, -0.2], &[0.3, -0.2])).abs() < 1e-15);
    }

    #[test]
    fn pack_round_trip_keeps_boundary() {
        let (kg, kh) = kernels(2);
        let src = PointMeasure::new(vec![1.0, 0.5], vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let tgt = PointMeasure::dirac(2.0, [0.5, 0.5]);
        let p = MeasureProblem::new(kg, kh, 0.5, 4, src, tgt)
            .unwrap()
            .with_aux_points(vec![[0.2, 0.2]]);
        let path = p.initial_path();
        p.check_path(&path).unwrap();
        let x = p.pack(&path);
        assert_eq!(x.len(), p.dof());
        let back = p.unpack(&x);
        assert_eq!(
            (&back.alpha, &back.x, &back.beta, &back.y, &back.aux_weights),
            (&path.alpha, &path.x, &path.beta, &path.y, &path.aux_weights)
        );
        assert_eq!(p.unpack(&p.pack(&back)), back);
    }

    #[test]
    fn measure_table_round_trip() {
        let m = PointMeasure::new(vec![1.0, -0.5], vec![[0.1, 0.2], [0.3, 0.4]]).unwrap();
        let back = PointMeasure::from_table(&Table::parse_csv(&m.to_table(2).to_csv()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_kernels_without_third_derivatives() {
        let kg = KernelSpec::helmholtz_green(1.0, 1.0, 2).unwrap();
        let kh = KernelSpec::gaussian(1.0, 1.0, 2).unwrap();
        let m = PointMeasure::dirac(1.0, [0.0, 0.0]);
        assert!(MeasureProblem::new(kg, kh, 1.0, 4, m.clone(), m).is_err());
    }
}
