//! Limited-memory quasi-Newton descent with Armijo backtracking.
//!
//! Constrained problems plug in a tangent projection and a retraction; the
//! iterate is then kept on the constraint set after every accepted step.

use std::collections::VecDeque;

pub trait Objective {
    /// Value and gradient at `x`.
    fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>);

    /// Projects `v` onto the tangent space of the feasible set at `x`.
    fn project(&self, _x: &[f64], _v: &mut [f64]) {}

    /// Maps `x` back onto the feasible set; `false` when that fails.
    fn retract(&self, _x: &mut [f64]) -> bool {
        true
    }

    /// Applies an approximate inverse Hessian in place, used as the initial
    /// matrix of the quasi-Newton recursion. `false` means no preconditioner.
    fn precondition(&self, _v: &mut [f64]) -> bool {
        false
    }
}

/// Wraps a closure returning `(value, gradient)`.
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Objective for FnObjective<F> {
    fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.0)(x)
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop once `‖g‖ ≤ grad_tol · (1 + |f|)`.
    pub grad_tol: f64,
    /// Stop once a step changes `f` by less than `f_tol · (1 + |f|)`
    /// three times in a row.
    pub f_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            memory: 12,
            grad_tol: 1e-8,
            f_tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn minimize<O: Objective>(obj: &mut O, x0: Vec<f64>, opts: &LbfgsOptions) -> OptimReport {
    let mut x = x0;
    if !obj.retract(&mut x) {
        let (f, g) = obj.value_grad(&x);
        return OptimReport {
            grad_norm: norm(&g),
            value: f,
            history: vec![f],
            x,
            iterations: 0,
            converged: false,
        };
    }
    let (mut f, mut g) = obj.value_grad(&x);
    obj.project(&x, &mut g);
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stalls = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let gn = norm(&g);
        if gn <= opts.grad_tol * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        let preconditioned = obj.precondition(&mut d);
        let gamma = match pairs.back() {
            Some((s, y, _)) if preconditioned => {
                let mut py = y.clone();
                obj.precondition(&mut py);
                dot(s, y) / dot(y, &py)
            }
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None if preconditioned => {
                let mut pg = g.clone();
                obj.precondition(&mut pg);
                1.0 / norm(&pg).max(1e-300)
            }
            None => 1.0 / gn.max(1e-300),
        };
        for v in d.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        obj.project(&x, &mut d);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v / gn).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            if obj.retract(&mut xn) {
                let (fn_, gn_) = obj.value_grad(&xn);
                if fn_.is_finite() && fn_ <= f + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, gn_));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, mut gnew)) = accepted else {
            if !pairs.is_empty() {
                pairs.clear();
                continue;
            }
            break;
        };
        obj.project(&xn, &mut gnew);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * norm(&s) * norm(&y) && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        if (f - fn_).abs() <= opts.f_tol * (1.0 + f.abs()) {
            stalls += 1;
        } else {
            stalls = 0;
        }
        x = xn;
        f = fn_;
        g = gnew;
        history.push(f);
        if stalls >= 3 {
            break;
        }
    }
    let grad_norm = norm(&g);
    if grad_norm <= opts.grad_tol * (1.0 + f.abs()) {
        converged = true;
    }
    OptimReport {
        x,
        value: f,
        grad_norm,
        iterations,
        history,
        converged,
    }
}

/// Outcome of [`conjugate_gradient`].
#[derive(Debug, Clone)]
pub struct CgReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖b − Ax‖ / ‖b‖`.
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for a symmetric positive definite `A`.
///
/// `precond` applies an approximation of `A⁻¹`; the identity gives plain CG.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> CgReport {
    let bn = norm(b);
    if bn == 0.0 {
        return CgReport {
            x: vec![0.0; b.len()],
            iterations: 0,
            relative_residual: 0.0,
        };
    }
    let mut x = x0;
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
    let mut zv = precond(&r);
    let mut p = zv.clone();
    let mut rz = dot(&r, &zv);
    let mut iterations = 0;
    let mut rel = norm(&r) / bn;
    while rel > tol && iterations < max_iter {
        iterations += 1;
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let a = rz / pap;
        for i in 0..x.len() {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        rel = norm(&r) / bn;
        zv = precond(&r);
        let rz_new = dot(&r, &zv);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = zv[i] + beta * p[i];
        }
    }
    CgReport {
        x,
        iterations,
        relative_residual: rel,
    }
}

/// Central finite-difference derivative of `f` along coordinate `i`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, step: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += step;
    xm[i] -= step;
    (f(&xp) - f(&xm)) / (2.0 * step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let mut obj = FnObjective(|x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (f, g)
        });
        let rep = minimize(&mut obj, vec![-1.2, 1.0], &LbfgsOptions::default());
        assert!(rep.converged);
        assert!((rep.x[0] - 1.0).abs() < 1e-6 && (rep.x[1] - 1.0).abs() < 1e-6);
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
    }

    struct Circle;

    impl Objective for Circle {
        fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
            ((x[0] - 2.0).powi(2) + x[1].powi(2), vec![2.0 * (x[0] - 2.0), 2.0 * x[1]])
        }
        fn project(&self, x: &[f64], v: &mut [f64]) {
            let n = norm(x);
            let c = dot(x, v) / (n * n);
            v[0] -= c * x[0];
            v[1] -= c * x[1];
        }
        fn retract(&self, x: &mut [f64]) -> bool {
            let n = norm(x);
            x[0] /= n;
            x[1] /= n;
            true
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let apply = |x: &[f64]| (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum()).collect::<Vec<f64>>();
        let b = [1.0, 2.0, 3.0];
        let rep = conjugate_gradient(apply, |r: &[f64]| r.to_vec(), &b, vec![0.0; 3], 1e-14, 10);
        let ax = apply(&rep.x);
        assert!(ax.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
        assert!(rep.iterations <= 4);
    }

    #[test]
    fn constrained_to_unit_circle() {
        let rep = minimize(&mut Circle, vec![0.0, 1.0], &LbfgsOptions::default());
        assert!((rep.x[0] - 1.0).abs() < 1e-6, "{:?}", rep.x);
        assert!((norm(&rep.x) - 1.0).abs() < 1e-14);
    }
}
