use std::f64::consts::PI;

use metamorph::grid_meta::{
    check_horizontality, check_integrated_momentum, match_bvp, GridBvp, GridMode, GridModel, MatchOptions,
};
use metamorph::optim::central_difference;
use metamorph::spectral::PeriodicGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth_field(grid: &PeriodicGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut f = vec![0.5; grid.len()];
    for kx in -1..=1 {
        for ky in -1..=1 {
            let (a, b): (f64, f64) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            for (i, v) in f.iter_mut().enumerate() {
                let [x, y] = grid.coords(i);
                let ph = 2.0 * PI * (kx as f64 * x + ky as f64 * y);
                *v += a * ph.cos() + b * ph.sin();
            }
        }
    }
    f
}

fn reference(mode: GridMode, n: usize) -> (GridModel, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = PeriodicGrid::unit(2, n).unwrap();
    let a = smooth_field(&grid, &mut rng);
    let b = smooth_field(&grid, &mut rng);
    (GridModel::new(grid, 2, 0.05, mode, 1.0).unwrap(), a, b)
}

fn opts(t: usize) -> MatchOptions {
    MatchOptions {
        timesteps: t,
        ..Default::default()
    }
}

#[test]
fn energy_gradient_matches_differences() {
    for mode in [GridMode::Image, GridMode::Density] {
        let (m, a, b) = reference(mode, 8);
        let bvp = GridBvp::new(&m, &a, &b, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u: Vec<_> = (0..4)
            .map(|_| {
                [
                    (0..64).map(|_| rng.random_range(-0.3..0.3)).collect(),
                    (0..64).map(|_| rng.random_range(-0.3..0.3)).collect(),
                ]
            })
            .collect();
        let mut nodes = bvp.linear_fade();
        for node in nodes.iter_mut().take(4).skip(1) {
            node.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
        }
        let x = bvp.pack(&nodes, &u);
        let (_, g) = bvp.energy_grad(&x).unwrap();
        let mut f = |y: &[f64]| bvp.energy_grad(y).unwrap().0;
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for _ in 0..20 {
            let i = rng.random_range(0..x.len());
            let fd = central_difference(&mut f, &x, i, 1e-5);
            let err = (fd - g[i]).abs() / g[i].abs().max(1e-3 * gmax);
            assert!(err <= 1e-5, "{mode:?} coordinate {i}: {fd} vs {}", g[i]);
        }
    }
}

#[test]
fn constant_fade_energy() {
    for mode in [GridMode::Image, GridMode::Density] {
        let grid = PeriodicGrid::unit(2, 8).unwrap();
        let m = GridModel::new(grid, 2, 0.05, mode, 0.4).unwrap();
        let (a, b) = (0.2, 0.9);
        let p = match_bvp(&m, &[a; 64], &[b; 64], &opts(10)).unwrap();
        let expected = (b - a) * (b - a) / 0.4;
        assert!((p.energy - expected).abs() <= 1e-3 * expected);
        assert_eq!(check_horizontality(&m, &p), 0.0);
        assert!(check_integrated_momentum(&m, &p).unwrap() < 1e-12);
    }
}

#[test]
fn random_pair_matches_dense_time_and_generic_descent() {
    let (m, a, b) = reference(GridMode::Image, 8);
    let coarse = match_bvp(&m, &a, &b, &opts(10)).unwrap();
    let fine = match_bvp(&m, &a, &b, &opts(20)).unwrap();
    assert!((coarse.energy - fine.energy).abs() <= 1e-3 * fine.energy);
    assert!(coarse.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));

    // Barzilai-Borwein gradient descent on all coordinates from the linear fade.
    let bvp = GridBvp::new(&m, &a, &b, 10).unwrap();
    let mut x = bvp.pack(&bvp.linear_fade(), &vec![m.zero_field(); 10]);
    let (mut f, mut g) = bvp.energy_grad(&x).unwrap();
    let mut step = 1e-2;
    for _ in 0..20000 {
        let xn: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        let (fn_, gn) = bvp.energy_grad(&xn).unwrap();
        let s: Vec<f64> = xn.iter().zip(&x).map(|(p, q)| p - q).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(p, q)| p - q).collect();
        let sy: f64 = s.iter().zip(&y).map(|(p, q)| p * q).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        step = if sy > 0.0 { ss / sy } else { 1e-2 };
        x = xn;
        f = fn_;
        g = gn;
        if bvp.gradient_norm(&g) < 1e-9 {
            break;
        }
    }
    assert!((coarse.energy - f).abs() <= 1e-3 * f, "{} vs {f}", coarse.energy);
}

#[test]
fn energy_is_symmetric_under_swap() {
    for mode in [GridMode::Image, GridMode::Density] {
        let (m, a, b) = reference(mode, 8);
        let fwd = match_bvp(&m, &a, &b, &opts(10)).unwrap();
        let back = match_bvp(&m, &b, &a, &opts(10)).unwrap();
        assert!((fwd.energy - back.energy).abs() <= 1e-3 * fwd.energy);
    }
}

#[test]
fn translation_equivariance() {
    let (m, a, b) = reference(GridMode::Image, 8);
    let g = m.grid().clone();
    let p = match_bvp(&m, &a, &b, &opts(6)).unwrap();
    let q = match_bvp(&m, &g.roll(&a, 3, -2), &g.roll(&b, 3, -2), &opts(6)).unwrap();
    assert!((p.energy - q.energy).abs() <= 1e-9 * p.energy);
    let scale = p.images.iter().flatten().fold(0.0_f64, |s, v| s.max(v.abs()));
    for (x, y) in p.images.iter().zip(&q.images) {
        for (u, v) in g.roll(x, 3, -2).iter().zip(y) {
            assert!((u - v).abs() <= 1e-5 * scale);
        }
    }
}

#[test]
fn density_mass_balance() {
    let (m, a, b) = reference(GridMode::Density, 8);
    let p = match_bvp(&m, &a, &b, &opts(10)).unwrap();
    let g = m.grid();
    for t in 0..10 {
        let lhs = g.integral(&p.images[t + 1]) - g.integral(&p.images[t]);
        let rhs = p.dt * m.sigma2() * g.integral(&p.momenta[t]);
        assert!((lhs - rhs).abs() <= 1e-8, "{t}: {lhs} vs {rhs}");
    }
}

#[test]
fn conservation_residuals_shrink_under_refinement() {
    for mode in [GridMode::Image, GridMode::Density] {
        let (m8, a, b) = reference(mode, 8);
        let (m16, a16, b16) = reference(mode, 16);
        let coarse = match_bvp(&m8, &a, &b, &opts(10)).unwrap();
        let fine = match_bvp(&m16, &a16, &b16, &opts(20)).unwrap();
        let (h8, h16) = (check_horizontality(&m8, &coarse), check_horizontality(&m16, &fine));
        let (i8, i16) = (
            check_integrated_momentum(&m8, &coarse).unwrap(),
            check_integrated_momentum(&m16, &fine).unwrap(),
        );
        assert!(h8 <= 0.05 && i8 <= 0.05, "{mode:?}: {h8} {i8}");
        assert!(h16 < h8 && i16 < i8, "{mode:?}: {h8} -> {h16}, {i8} -> {i16}");
    }
}

#[test]
fn zero_path_has_zero_residuals() {
    let (m, a, _) = reference(GridMode::Image, 8);
    let p = match_bvp(&m, &a, &a, &opts(4)).unwrap();
    assert_eq!(p.energy, 0.0);
    assert_eq!(check_horizontality(&m, &p), 0.0);
    assert_eq!(check_integrated_momentum(&m, &p).unwrap(), 0.0);
}

#[test]
fn ivp_energy_is_conserved() {
    for mode in [GridMode::Image, GridMode::Density] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = PeriodicGrid::unit(2, 16).unwrap();
        let n = smooth_field(&grid, &mut rng);
        let z: Vec<f64> = smooth_field(&grid, &mut rng).iter().map(|v| v - 0.5).collect();
        let m = GridModel::new(grid, 2, 0.05, mode, 1.0).unwrap();
        let s = m.state(n, z).unwrap();
        let traj = m.integrate_ivp(&s, 1.0, 1e-2).unwrap();
        assert!(traj.relative_energy_drift() <= 1e-5, "{mode:?}: {}", traj.relative_energy_drift());
        assert!(traj.warnings.is_empty());
    }
}
