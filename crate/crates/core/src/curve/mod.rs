//! Closed unit-length plane curves in the tangent-angle chart.
//!
//! A curve is `γ(θ) = γ₀ + (1/2π) ∫₀^θ h_α`, `h_α = (cos α, sin α)`, on
//! `θ ∈ [0, 2π)`; the lift satisfies `α(θ + 2π) = α(θ) + 2πw` with winding
//! number `w`. Closure is `∫ h_α dθ = 0`.
//!
//! The geodesic system, with `h^⊥_α = (−sin α, cos α)`:
//!
//! ```text
//! u'' = ρα'                     (zero-mean u)
//! α̇ = σ²ρ − uα'
//! ρ̇ = −(uρ)' − λᵀh^⊥_α
//! ∫ α̇ h^⊥_α dθ = 0
//! ```

mod bvp;

pub use bvp::{match_curves, CurveBvp, CurveMatchOptions, CurvePath};

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::io::Table;
use crate::spectral::PeriodicGrid;

/// Sampling of `S¹` and the winding number of the lifts.
#[derive(Debug, Clone)]
pub struct CurveSpace {
    grid: PeriodicGrid,
    winding: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveState {
    pub alpha: Vec<f64>,
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: [f64; 2],
    pub sigma2: f64,
}

/// Output of [`curve_rhs`].
#[derive(Debug, Clone)]
pub struct CurveRates {
    pub alpha_dot: Vec<f64>,
    pub rho_dot: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: [f64; 2],
}

impl CurveSpace {
    pub fn new(points: usize, winding: i32) -> Result<Self> {
        if points < 8 || points % 2 != 0 {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: format!("must be even and ≥ 8, got {points}"),
            });
        }
        if winding == 0 {
            return Err(Error::InvalidParameter {
                name: "winding",
                reason: "closed curves in this chart need a nonzero winding".into(),
            });
        }
        Ok(Self {
            grid: PeriodicGrid::new_1d(points, 2.0 * PI / points as f64)?,
            winding,
        })
    }

    pub fn points(&self) -> usize {
        self.grid.len()
    }

    pub fn winding(&self) -> i32 {
        self.winding
    }

    pub fn dtheta(&self) -> f64 {
        self.grid.spacing()
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn theta(&self) -> Vec<f64> {
        (0..self.points()).map(|j| j as f64 * self.dtheta()).collect()
    }

    pub fn check(&self, field: &[f64]) -> Result<()> {
        self.grid.check(field)
    }

    /// Jump of the lift over one period.
    pub fn period_jump(&self) -> f64 {
        2.0 * PI * self.winding as f64
    }

    /// Spectral `α'` of a lift.
    pub fn derivative(&self, alpha: &[f64]) -> Vec<f64> {
        let w = self.winding as f64;
        let beta: Vec<f64> = alpha.iter().zip(self.theta()).map(|(a, t)| a - w * t).collect();
        self.grid.derivative(&beta, 0).iter().map(|d| d + w).collect()
    }

    /// `∫ h_α dθ` by the periodic rectangle rule.
    pub fn closure(&self, alpha: &[f64]) -> [f64; 2] {
        let d = self.dtheta();
        alpha
            .iter()
            .fold([0.0, 0.0], |s, a| [s[0] + d * a.cos(), s[1] + d * a.sin()])
    }

    /// Gap between the endpoints of the reconstructed unit-length curve.
    pub fn closure_residual(&self, alpha: &[f64]) -> f64 {
        let [x, y] = self.closure(alpha);
        x.hypot(y) / (2.0 * PI)
    }

    /// One Newton correction `α + ∇Cᵀ(∇C∇Cᵀ)⁻¹(−C)`; returns the new residual.
    fn newton_step(&self, alpha: &mut [f64]) -> Option<f64> {
        let d = self.dtheta();
        let c = self.closure(alpha);
        let (mut g00, mut g01, mut g11) = (0.0, 0.0, 0.0);
        for a in alpha.iter() {
            let (s, co) = a.sin_cos();
            g00 += d * d * s * s;
            g01 -= d * d * s * co;
            g11 += d * d * co * co;
        }
        let det = g00 * g11 - g01 * g01;
        if !(det > 1e-14 * (g00 + g11).powi(2)) {
            return None;
        }
        let m0 = -(g11 * c[0] - g01 * c[1]) / det;
        let m1 = -(-g01 * c[0] + g00 * c[1]) / det;
        for a in alpha.iter_mut() {
            let (s, co) = a.sin_cos();
            *a += d * (-s * m0 + co * m1);
        }
        Some(self.closure_residual(alpha))
    }

    /// Newton projection onto `∫ h_α = 0` (minimal-norm corrections).
    pub fn project_closed(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.check(alpha)?;
        let mut a = alpha.to_vec();
        let mut r = self.closure_residual(&a);
        for _ in 0..30 {
            if r <= 1e-14 {
                return Ok(a);
            }
            match self.newton_step(&mut a) {
                Some(next) if next.is_finite() => r = next,
                _ => break,
            }
        }
        if r <= 1e-12 {
            Ok(a)
        } else {
            Err(Error::Constraint { residual: r })
        }
    }

    /// Closed polyline of the unit-length curve starting at the origin; the
    /// last vertex repeats the first up to the closure residual.
    pub fn reconstruct(&self, alpha: &[f64]) -> Vec<[f64; 2]> {
        let step = self.dtheta() / (2.0 * PI);
        let mut pts = vec![[0.0, 0.0]];
        for a in alpha {
            let p = *pts.last().unwrap();
            pts.push([p[0] + step * a.cos(), p[1] + step * a.sin()]);
        }
        pts
    }

    /// Counter-clockwise circle, tangent angle `θ + π/2`.
    pub fn circle(&self) -> Vec<f64> {
        self.theta().iter().map(|t| t * self.winding as f64 + PI / 2.0).collect()
    }

    /// Ellipse with semi-axes `a`, `b` sampled at equal arclength, starting
    /// at `(a, 0)`; only defined for winding 1.
    pub fn ellipse(&self, a: f64, b: f64) -> Result<Vec<f64>> {
        if self.winding != 1 {
            return Err(Error::InvalidParameter {
                name: "winding",
                reason: "ellipse samples need winding 1".into(),
            });
        }
        crate::error::ensure_positive("a", a)?;
        crate::error::ensure_positive("b", b)?;
        let fine = 64 * self.points();
        let speed = |t: f64| (a * t.sin()).hypot(b * t.cos());
        let h = 2.0 * PI / fine as f64;
        // Cumulative arclength by Simpson on each fine cell.
        let mut s = vec![0.0; fine + 1];
        for i in 0..fine {
            let t = i as f64 * h;
            s[i + 1] = s[i] + h / 6.0 * (speed(t) + 4.0 * speed(t + 0.5 * h) + speed(t + h));
        }
        let total = s[fine];
        let m = self.points();
        let mut out = Vec::with_capacity(m);
        let mut i = 0;
        for j in 0..m {
            let target = total * j as f64 / m as f64;
            while s[i + 1] < target {
                i += 1;
            }
            // Newton on the parameter inside the cell.
            let mut t = i as f64 * h + h * (target - s[i]) / (s[i + 1] - s[i]);
            for _ in 0..3 {
                let t0 = i as f64 * h;
                let mid = 0.5 * (t0 + t);
                let arc = s[i] + (t - t0) / 6.0 * (speed(t0) + 4.0 * speed(mid) + speed(t));
                t -= (arc - target) / speed(t);
            }
            let ang = (b * t.cos()).atan2(-a * t.sin());
            // Lift continuously from π/2.
            let base = PI / 2.0 + 2.0 * PI * j as f64 / m as f64;
            let k = ((base - ang) / (2.0 * PI)).round();
            out.push(ang + 2.0 * PI * k);
        }
        Ok(out)
    }

    /// The same curve rotated by `c`.
    pub fn rotate(&self, alpha: &[f64], c: f64) -> Vec<f64> {
        alpha.iter().map(|a| a + c).collect()
    }

    /// `θ ↦ −f(−θ)` for a periodic field.
    pub fn reflect(&self, f: &[f64]) -> Vec<f64> {
        let m = f.len();
        (0..m).map(|j| -f[(m - j) % m]).collect()
    }

    /// `θ ↦ −α(−θ)` for a lift: the mirrored, reversed curve.
    pub fn reflect_lift(&self, alpha: &[f64]) -> Vec<f64> {
        let m = alpha.len();
        let jump = self.period_jump();
        (0..m)
            .map(|j| if j == 0 { -alpha[0] } else { jump - alpha[m - j] })
            .collect()
    }

    /// Zero-mean solution of `u'' = f − mean(f)`.
    pub fn poisson(&self, f: &[f64]) -> Vec<f64> {
        self.grid
            .apply_symbol(f, |k, _| if k == 0.0 { 0.0 } else { -1.0 / (k * k) })
    }

    /// Columns `theta, alpha`.
    pub fn to_table(&self, alpha: &[f64]) -> Table {
        let mut t = Table::new(["theta", "alpha"]);
        for (th, a) in self.theta().iter().zip(alpha) {
            t.push(vec![*th, *a]);
        }
        t
    }

    /// Reads `theta, alpha` rows; the θ column must match the grid.
    pub fn from_table(&self, table: &Table) -> Result<Vec<f64>> {
        let missing = |c: &str| Error::Parse(format!("missing column {c}"));
        let th = table.column("theta").ok_or_else(|| missing("theta"))?;
        let alpha = table.column("alpha").ok_or_else(|| missing("alpha"))?;
        self.check(&alpha)?;
        for (a, b) in th.iter().zip(self.theta()) {
            if (a - b).abs() > 1e-9 {
                return Err(Error::Parse(format!("theta {a} does not match grid node {b}")));
            }
        }
        Ok(alpha)
    }

    /// Columns `x, y` of the reconstructed polyline.
    pub fn polyline_table(&self, alpha: &[f64]) -> Table {
        let mut t = Table::new(["x", "y"]);
        for p in self.reconstruct(alpha) {
            t.push(p.to_vec());
        }
        t
    }

    /// Conserved energy `∫u'² + σ²∫ρ²` of an IVP state.
    pub fn energy(&self, state: &CurveState) -> f64 {
        let ux = self.grid.derivative(&state.u, 0);
        let d = self.dtheta();
        d * ux.iter().map(|v| v * v).sum::<f64>() + state.sigma2 * d * state.rho.iter().map(|v| v * v).sum::<f64>()
    }
}

fn integral(d: f64, f: impl Iterator<Item = f64>) -> f64 {
    d * f.sum::<f64>()
}

/// Rates of the geodesic system at `(α, ρ)`; `λ` keeps
/// `d/dt ∫ α̇ h^⊥_α` at zero.
pub fn curve_rhs(space: &CurveSpace, state: &CurveState) -> Result<CurveRates> {
    space.check(&state.alpha)?;
    space.check(&state.rho)?;
    crate::error::ensure_positive("sigma2", state.sigma2)?;
    let g = space.grid();
    let d = space.dtheta();
    let s2 = state.sigma2;
    let (alpha, rho) = (&state.alpha, &state.rho);
    let m = alpha.len();
    let ap = space.derivative(alpha);
    let f: Vec<f64> = (0..m).map(|j| rho[j] * ap[j]).collect();
    let u = space.poisson(&f);
    let alpha_dot: Vec<f64> = (0..m).map(|j| s2 * rho[j] - u[j] * ap[j]).collect();
    let flux: Vec<f64> = (0..m).map(|j| u[j] * rho[j]).collect();
    let r: Vec<f64> = g.derivative(&flux, 0).iter().map(|v| -v).collect();
    let adp = g.derivative(&alpha_dot, 0);
    let u0 = space.poisson(&(0..m).map(|j| r[j] * ap[j] + rho[j] * adp[j]).collect::<Vec<_>>());
    let (sin, cos): (Vec<f64>, Vec<f64>) = alpha.iter().map(|a| a.sin_cos()).unzip();
    let perp = [
        sin.iter().map(|s| -s).collect::<Vec<f64>>(),
        cos.clone(),
    ];
    let tang = [cos, sin];
    let uj: Vec<Vec<f64>> = perp
        .iter()
        .map(|p| space.poisson(&(0..m).map(|j| -p[j] * ap[j]).collect::<Vec<_>>()))
        .collect();
    let mut a = [[0.0; 2]; 2];
    let mut b = [0.0; 2];
    for i in 0..2 {
        for jj in 0..2 {
            a[i][jj] = integral(d, (0..m).map(|k| (s2 * perp[jj][k] + uj[jj][k] * ap[k]) * perp[i][k]));
        }
        b[i] = integral(d, (0..m).map(|k| (s2 * r[k] - u0[k] * ap[k] - u[k] * adp[k]) * perp[i][k]))
            - integral(d, (0..m).map(|k| alpha_dot[k] * alpha_dot[k] * tang[i][k]));
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = (a[0][0].abs() + a[1][1].abs()).powi(2);
    if !(det.abs() > 1e-10 * scale) {
        return Err(Error::Degenerate(format!(
            "closure multiplier system is singular (det {det:e})"
        )));
    }
    let lambda = [
        (a[1][1] * b[0] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ];
    let rho_dot: Vec<f64> = (0..m)
        .map(|k| r[k] - lambda[0] * perp[0][k] - lambda[1] * perp[1][k])
        .collect();
    Ok(CurveRates {
        alpha_dot,
        rho_dot,
        u,
        lambda,
    })
}
