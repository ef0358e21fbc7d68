//! Spectrum of the Lax operator `a ψ'' + (−1/4 + mλ + ρ²λ²) ψ = 0`.
//!
//! With `μ = 1/λ` the pencil becomes `μ²A₀ + μA₁ + A₂` where
//! `A₀ = aD₂ − I/4` is always invertible, `A₁ = diag(m)`, `A₂ = diag(ρ²)`;
//! its companion matrix `[[0, I], [−A₀⁻¹A₂, −A₀⁻¹A₁]]` is solved densely.
//! The smallest `|λ|` are the largest `|μ|`, and `μ = 0` (from `ρ = 0`)
//! corresponds to `λ = ∞` and is dropped.

use nalgebra::{Complex, DMatrix};

use super::{OneDState, OneDSystem, Variant};
use crate::error::{Error, Result};

/// Dense discretization of the Lax eigenproblem for one state.
#[derive(Debug, Clone)]
pub struct LaxProblem {
    companion: DMatrix<f64>,
}

impl LaxProblem {
    pub fn new(system: &OneDSystem, state: &OneDState) -> Result<Self> {
        if system.variant() != Variant::L2 {
            return Err(Error::InvalidParameter {
                name: "variant",
                reason: format!("the Lax pair is stated for l2, got {}", system.variant().name()),
            });
        }
        let g = system.grid();
        g.check(&state.m)?;
        g.check(&state.rho)?;
        let n = g.len();
        let a = system.alpha();
        // Columns of A₀⁻¹, a circulant Fourier multiplier.
        let mut inv = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = g.apply_symbol(&e, |kx, _| 1.0 / (-a * kx * kx - 0.25));
            e[j] = 0.0;
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        let mut c = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            c[(i, n + i)] = 1.0;
        }
        for j in 0..n {
            let (r2, m) = (state.rho[j] * state.rho[j], state.m[j]);
            for i in 0..n {
                c[(n + i, j)] = -r2 * inv[(i, j)];
                c[(n + i, n + j)] = -m * inv[(i, j)];
            }
        }
        Ok(Self { companion: c })
    }

    /// All finite `λ`, sorted by modulus.
    pub fn eigenvalues(&self) -> Result<Vec<Complex<f64>>> {
        let mu = self.companion.clone().complex_eigenvalues();
        if mu.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("non-finite eigenvalue".into()));
        }
        let big = mu.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if big == 0.0 {
            return Ok(Vec::new());
        }
        let mut lambda: Vec<Complex<f64>> = mu
            .iter()
            .filter(|z| z.norm() > 1e-10 * big)
            .map(|z| Complex::new(1.0, 0.0) / z)
            .collect();
        lambda.sort_by(|x, y| {
            x.norm()
                .total_cmp(&y.norm())
                .then(x.re.total_cmp(&y.re))
                .then(x.im.total_cmp(&y.im))
        });
        Ok(lambda)
    }
}

/// The `count` eigenvalues of smallest modulus.
pub fn lax_spectrum(system: &OneDSystem, state: &OneDState, count: usize) -> Result<Vec<Complex<f64>>> {
    let mut all = LaxProblem::new(system, state)?.eigenvalues()?;
    all.truncate(count);
    Ok(all)
}
