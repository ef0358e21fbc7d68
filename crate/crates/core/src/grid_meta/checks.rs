//! Conservation-law diagnostics for matched grid paths.

use super::{GridMode, GridModel, GridPath, VectorField};
use crate::error::{Error, Result};
use crate::spectral::TrigInterpolant;

fn l2(model: &GridModel, f: &VectorField) -> f64 {
    let g = model.grid();
    (g.inner(&f[0], &f[0]) + g.inner(&f[1], &f[1])).sqrt()
}

/// `max_t ‖L u + z∇n‖ / max_t ‖L u‖` (density mode: `L u − n∇z`).
///
/// Evaluated at the interior nodes, where `u` and `z` are averages of the
/// two adjacent intervals. Returns 0 when both norms vanish.
pub fn check_horizontality(model: &GridModel, path: &GridPath) -> f64 {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let avg = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect() };
    for t in 1..path.timesteps() {
        let u = [
            avg(&path.velocities[t - 1][0], &path.velocities[t][0]),
            avg(&path.velocities[t - 1][1], &path.velocities[t][1]),
        ];
        let z = avg(&path.momenta[t - 1], &path.momenta[t]);
        let lu = model.operator().apply_l_vec(&u);
        let m = model.transport_adjoint_velocity(&path.images[t], &z);
        let r = [
            lu[0].iter().zip(&m[0]).map(|(a, b)| a + b).collect(),
            lu[1].iter().zip(&m[1]).map(|(a, b)| a + b).collect(),
        ];
        num = num.max(l2(model, &r));
        den = den.max(l2(model, &lu));
        scale = scale.max(l2(model, &m));
    }
    let floor = 1e-12 * (1.0 + scale);
    if den <= floor && num <= floor {
        0.0
    } else {
        num / den
    }
}

/// Compares `z_t` with the transported `z_0` along the reconstructed flow.
pub fn check_integrated_momentum(model: &GridModel, path: &GridPath) -> Result<f64> {
    integrated_momentum_residual(model, &path.velocities, &path.momenta, path.dt)
}

fn advect(points: &mut [[f64; 2]], u: &[TrigInterpolant; 2], duration: f64, substeps: usize) {
    let h = duration / substeps as f64;
    let f = |p: [f64; 2]| [u[0].eval(p), u[1].eval(p)];
    for p in points.iter_mut() {
        for _ in 0..substeps {
            let k1 = f(*p);
            let k2 = f([p[0] + 0.5 * h * k1[0], p[1] + 0.5 * h * k1[1]]);
            let k3 = f([p[0] + 0.5 * h * k2[0], p[1] + 0.5 * h * k2[1]]);
            let k4 = f([p[0] + h * k3[0], p[1] + h * k3[1]]);
            for i in 0..2 {
                p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
}

/// Max discrepancy between `z_t` and `det(Dg_t⁻¹)·z_0∘g_t⁻¹` (images) or
/// `z_0∘g_t⁻¹` (densities), relative to `max_t |z_t|`.
///
/// `z_t` and `u_t` are interval values at times `(t + ½)Δt`; velocities are
/// constant on each interval. The inverse flow is built one interval at a
/// time by backward particle advection and composition with the previous
/// inverse map, using trigonometric interpolation throughout.
pub fn integrated_momentum_residual(
    model: &GridModel,
    velocities: &[VectorField],
    momenta: &[Vec<f64>],
    dt: f64,
) -> Result<f64> {
    let g = model.grid();
    if velocities.len() != momenta.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} momenta", velocities.len()),
            got: momenta.len().to_string(),
        });
    }
    for z in momenta {
        g.check(z)?;
    }
    let len = g.len();
    let zmax = momenta.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    if zmax == 0.0 || momenta.is_empty() {
        return Ok(0.0);
    }
    let z0 = g.interpolant(&momenta[0]);
    let grid_pts: Vec<[f64; 2]> = (0..len).map(|i| g.coords(i)).collect();
    let mut disp = [vec![0.0; len], vec![0.0; len]];
    let mut worst: f64 = 0.0;
    let interp = |f: &VectorField| [g.interpolant(&f[0]), g.interpolant(&f[1])];
    for t in 1..momenta.len() {
        let mut pts = grid_pts.clone();
        advect(&mut pts, &interp(&velocities[t]), -0.5 * dt, 2);
        advect(&mut pts, &interp(&velocities[t - 1]), -0.5 * dt, 2);
        let prev = interp(&disp);
        let mut next = [vec![0.0; len], vec![0.0; len]];
        for i in 0..len {
            for c in 0..2 {
                next[c][i] = pts[i][c] - grid_pts[i][c] + prev[c].eval(pts[i]);
            }
        }
        disp = next;
        let [dxx, dxy] = g.gradient(&disp[0]);
        let [dyx, dyy] = g.gradient(&disp[1]);
        for i in 0..len {
            let phi = [grid_pts[i][0] + disp[0][i], grid_pts[i][1] + disp[1][i]];
            let jac = match model.mode() {
                GridMode::Image => (1.0 + dxx[i]) * (1.0 + dyy[i]) - dxy[i] * dyx[i],
                GridMode::Density => 1.0,
            };
            worst = worst.max((momenta[t][i] - jac * z0.eval(phi)).abs());
        }
    }
    Ok(worst / zmax)
}
