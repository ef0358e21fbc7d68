use std::f64::consts::PI;

use metamorph::oned::{integrate_1d, lax_spectrum, rhs_1d, OneDState, OneDSystem, Variant};
use metamorph::spectral::PeriodicGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_smooth(x: &[f64], rng: &mut ChaCha8Rng, mean: f64) -> Vec<f64> {
    let coeffs: Vec<(f64, f64)> = (1..=4)
        .map(|_| (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)))
        .collect();
    x.iter()
        .map(|x| {
            mean + coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let ph = 2.0 * PI * (k + 1) as f64 * x;
                    a * ph.cos() + b * ph.sin()
                })
                .sum::<f64>()
        })
        .collect()
}

fn smooth_state(sys: &OneDSystem, seed: u64) -> OneDState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sys.x();
    let m = random_smooth(&x, &mut rng, 0.5);
    let rho = random_smooth(&x, &mut rng, 0.8);
    sys.state(m, rho).unwrap()
}

// Camassa-Holm momentum equation written out directly.
fn ch_rhs(grid: &PeriodicGrid, a: f64, m: &[f64]) -> Vec<f64> {
    let m = grid.dealias(m);
    let u = grid.apply_symbol(&m, |k, _| 1.0 / (1.0 + a * k * k));
    let ux = grid.derivative(&u, 0);
    let mx = grid.derivative(&m, 0);
    let out: Vec<f64> = (0..m.len()).map(|i| -(u[i] * mx[i] + 2.0 * m[i] * ux[i])).collect();
    grid.dealias(&out)
}

#[test]
fn zero_density_is_camassa_holm_bitwise() {
    for variant in [Variant::L2, Variant::Generalized, Variant::Smooth] {
        let sys = OneDSystem::new(64, 1.0, variant, 0.1).unwrap();
        let mut s = smooth_state(&sys, 1);
        s.rho = vec![0.0; 64];
        let (dm, drho) = rhs_1d(&sys, &s);
        assert_eq!(dm, ch_rhs(sys.grid(), 1.0, &s.m));
        assert!(drho.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn density_rate_integrates_to_zero() {
    for variant in [Variant::L2, Variant::Generalized, Variant::Smooth] {
        let sys = OneDSystem::new(128, 1.0, variant, 0.05).unwrap();
        for seed in 0..5 {
            let (_, drho) = rhs_1d(&sys, &smooth_state(&sys, seed));
            assert!(sys.grid().integral(&drho).abs() <= 1e-12);
        }
    }
}

#[test]
fn conservation_over_unit_horizon() {
    for variant in [Variant::L2, Variant::Generalized, Variant::Smooth] {
        let sys = OneDSystem::new(256, 1.0, variant, 0.05).unwrap();
        let tr = integrate_1d(&sys, &smooth_state(&sys, 7), 1.0, 1e-3, 250).unwrap();
        assert!(tr.mass_drift() <= 1e-8, "{variant:?}: mass drift {}", tr.mass_drift());
        assert!(
            tr.relative_energy_drift() <= 1e-5,
            "{variant:?}: energy drift {}",
            tr.relative_energy_drift()
        );
        assert_eq!(tr.snapshots.len(), 5);
    }
}

#[test]
fn l2_energy_is_h1_plus_l2() {
    let sys = OneDSystem::new(64, 1.0, Variant::L2, 1.0).unwrap();
    let s = smooth_state(&sys, 3);
    let g = sys.grid();
    let u = sys.velocity(&s.m);
    let ux = g.derivative(&u, 0);
    let direct: f64 = g.inner(&u, &u) + g.inner(&ux, &ux) + g.inner(&s.rho, &s.rho);
    assert!((sys.energy(&s) - direct).abs() <= 1e-12 * direct);
}

#[test]
fn shift_equivariance() {
    let sys = OneDSystem::new(64, 1.0, Variant::L2, 1.0).unwrap();
    let s = smooth_state(&sys, 4);
    let g = sys.grid();
    let shifted = OneDState {
        m: g.roll(&s.m, 5, 0),
        rho: g.roll(&s.rho, 5, 0),
    };
    let a = integrate_1d(&sys, &s, 0.5, 1e-2, 10).unwrap();
    let b = integrate_1d(&sys, &shifted, 0.5, 1e-2, 10).unwrap();
    for (x, y) in g.roll(&a.last().m, 5, 0).iter().zip(&b.last().m) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn fourth_order_in_time() {
    let sys = OneDSystem::new(64, 1.0, Variant::L2, 1.0).unwrap();
    let s = smooth_state(&sys, 9);
    let reference = integrate_1d(&sys, &s, 1.0, 0.01 / 8.0, 1 << 20).unwrap();
    let err = |dt: f64| {
        let t = integrate_1d(&sys, &s, 1.0, dt, 1 << 20).unwrap();
        let (a, b) = (t.last(), reference.last());
        a.m.iter()
            .zip(&b.m)
            .chain(a.rho.iter().zip(&b.rho))
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    let ratio = err(0.02) / err(0.01);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn constant_coefficient_spectrum() {
    for (a, c) in [(1.0, 1.0), (0.5, 2.0)] {
        let sys = OneDSystem::new(32, a, Variant::L2, 1.0).unwrap();
        let s = sys.state(vec![0.0; 32], vec![c; 32]).unwrap();
        let got = lax_spectrum(&sys, &s, 10).unwrap();
        let mut expected = Vec::new();
        for k in 0..3 {
            let l = (0.25 + a * (2.0 * PI * k as f64).powi(2)).sqrt() / c;
            let mult = if k == 0 { 1 } else { 2 };
            for _ in 0..mult {
                expected.push(-l);
                expected.push(l);
            }
        }
        for (g, e) in got.iter().zip(&expected) {
            assert!(g.im.abs() <= 1e-6 * e.abs());
            assert!((g.re.abs() - e.abs()).abs() <= 1e-6 * e.abs(), "{g} vs {e}");
        }
        let negatives = got.iter().filter(|z| z.re < 0.0).count();
        assert_eq!(negatives, 5);
    }
}

#[test]
fn spectrum_is_even_in_density() {
    let sys = OneDSystem::new(32, 1.0, Variant::L2, 1.0).unwrap();
    let s = smooth_state(&sys, 2);
    let flipped = OneDState {
        m: s.m.clone(),
        rho: s.rho.iter().map(|v| -v).collect(),
    };
    let a = lax_spectrum(&sys, &s, 6).unwrap();
    let b = lax_spectrum(&sys, &flipped, 6).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).norm() <= 1e-10 * x.norm());
    }
}

#[test]
fn isospectral_flow() {
    let sys = OneDSystem::new(256, 1.0, Variant::L2, 1.0).unwrap();
    let s = smooth_state(&sys, 12);
    let tr = integrate_1d(&sys, &s, 1.0, 1e-3, 1000).unwrap();
    let before = lax_spectrum(&sys, &s, 6).unwrap();
    let after = lax_spectrum(&sys, tr.last(), 12).unwrap();
    for l in &before {
        let nearest = after.iter().map(|m| (m - l).norm()).fold(f64::INFINITY, f64::min);
        assert!(nearest <= 1e-3 * l.norm(), "{l}: drift {nearest}");
    }
}

#[test]
fn smoothed_peakon_travels_with_fixed_shape() {
    let sys = OneDSystem::new(256, 1.0, Variant::L2, 1.0).unwrap();
    let m0 = sys.bumps(&[0.3], &[1.0], 0.01);
    let s = sys.state(m0, vec![0.0; 256]).unwrap();
    let tr = integrate_1d(&sys, &s, 0.2, 1e-3, 100).unwrap();
    let g = sys.grid();
    let peak = |u: &[f64]| {
        let it = g.interpolant(u);
        (0..20000)
            .map(|i| i as f64 / 20000.0)
            .max_by(|a, b| it.eval([*a, 0.0]).total_cmp(&it.eval([*b, 0.0])))
            .unwrap()
    };
    let u0 = sys.velocity(&tr.snapshots[0].1.m);
    let u1 = sys.velocity(&tr.snapshots[1].1.m);
    let u2 = sys.velocity(&tr.snapshots[2].1.m);
    let (p0, p1, p2) = (peak(&u0), peak(&u1), peak(&u2));
    let amp = u0.iter().fold(0.0_f64, |m, v| m.max(*v));
    // Constant speed equal to the peak amplitude.
    let (v1, v2) = ((p1 - p0) / 0.1, (p2 - p1) / 0.1);
    assert!((v1 - v2).abs() <= 1e-2 * v1, "{v1} vs {v2}");
    assert!((v1 - amp).abs() <= 2e-2 * amp, "{v1} vs {amp}");
    // Shape after undoing the shift.
    let back = g.interpolant(&u2);
    let shift = p2 - p0;
    let err = (0..256)
        .map(|i| (back.eval([g.coords(i)[0] + shift, 0.0]) - u0[i]).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-2 * amp, "shape error {err}");
}

#[test]
fn mollified_singular_density_runs() {
    let sys = OneDSystem::new(256, 1.0, Variant::Smooth, 0.01).unwrap();
    let rho = sys.bumps(&[0.25, 0.6], &[0.3, 0.2], 0.02);
    let m = sys.bumps(&[0.4], &[0.5], 0.05);
    let s = sys.state(m, rho).unwrap();
    let tr = integrate_1d(&sys, &s, 0.5, 1e-3, 100).unwrap();
    assert!(tr.mass_drift() <= 1e-8);
    assert!(tr.relative_energy_drift() <= 1e-5);
}
