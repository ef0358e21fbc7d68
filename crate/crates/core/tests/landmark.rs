use metamorph::kernels::{KernelSpec, Points};
use metamorph::landmark::{
    collision_experiment, integrate_ivp, optimize_path, shoot_bvp, CollisionKind, CollisionOptions, LandmarkPhase,
    PathOptions, PathProblem, ShootingOptions,
};
use metamorph::optim::central_difference;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gauss(dim: usize) -> KernelSpec {
    KernelSpec::gaussian(1.0, 1.0, dim).unwrap()
}

fn random_phase(seed: u64, n: usize, dim: usize, sigma2: f64) -> LandmarkPhase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let p = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    LandmarkPhase::new(
        Points::new(dim, q).unwrap(),
        Points::new(dim, p).unwrap(),
        sigma2,
        gauss(dim),
    )
    .unwrap()
}

#[test]
fn energy_is_conserved_over_unit_horizon() {
    for (seed, n, dim, sigma2) in [(1, 2, 1, 0.0), (2, 3, 1, 0.1), (3, 4, 2, 0.5), (4, 5, 2, 1e-4)] {
        let tr = integrate_ivp(&random_phase(seed, n, dim, sigma2), 1.0, 1e-3).unwrap();
        assert!(tr.relative_energy_drift() <= 1e-6, "seed {seed}: {}", tr.relative_energy_drift());
        assert_eq!(tr.times.len(), 1001);
    }
}

#[test]
fn integrator_is_fourth_order() {
    let phase = random_phase(7, 3, 2, 0.2);
    let reference = integrate_ivp(&phase, 1.0, 0.05 / 8.0).unwrap();
    let err = |dt: f64| {
        let a = integrate_ivp(&phase, 1.0, dt).unwrap();
        let (x, y) = (a.last(), reference.last());
        x.q.as_slice()
            .iter()
            .zip(y.q.as_slice())
            .chain(x.p.as_slice().iter().zip(y.p.as_slice()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let ratio = err(0.1) / err(0.05);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn zero_momentum_stays_put() {
    let q = Points::new(2, vec![0.1, 0.2, -0.5, 0.3]).unwrap();
    let phase = LandmarkPhase::new(q.clone(), Points::zeros(2, 2), 0.3, gauss(2)).unwrap();
    let tr = integrate_ivp(&phase, 1.0, 0.1).unwrap();
    assert!(tr.states.iter().all(|s| s.q == q));
}

#[test]
fn two_peakon_trajectory_is_the_collision_branch() {
    let opts = CollisionOptions::default();
    let c = collision_experiment(CollisionKind::HeadOn, 1.0, 0.0, 2.0, &opts).unwrap();
    let phase = LandmarkPhase::new(
        Points::new(1, vec![-1.0, 1.0]).unwrap(),
        Points::new(1, vec![0.5, -0.5]).unwrap(),
        0.0,
        gauss(1),
    )
    .unwrap();
    let tr = integrate_ivp(&phase, 2.0, opts.dt).unwrap();
    for (s, r) in tr.states.iter().zip(&c.separation) {
        assert_eq!(s.q.as_slice()[1] - s.q.as_slice()[0], *r);
    }
}

#[test]
fn head_on_pair_nears_without_crossing_unless_sigma_is_positive() {
    let opts = CollisionOptions::default();
    let horizon = 20.0;
    let rigid = collision_experiment(CollisionKind::HeadOn, 1.0, 0.0, horizon, &opts).unwrap();
    let r0 = rigid.separation[0];
    assert!(!rigid.crossing && rigid.min_separation() > 0.0);
    assert!(rigid.separation.windows(2).all(|w| w[1] <= w[0]));
    assert!(*rigid.separation.last().unwrap() < 0.1 * r0);
    let soft = collision_experiment(CollisionKind::HeadOn, 1.0, 1e-4, horizon, &opts).unwrap();
    assert!(soft.crossing);
    let last = *soft.separation.last().unwrap();
    assert!(last < 0.0 && last.abs() > r0, "r(T) = {last}");
}

#[test]
fn overtaking_needs_a_large_gap_and_positive_sigma() {
    let opts = CollisionOptions::default();
    let gaps = [2.0, 8.0, 32.0];
    let crossings: Vec<bool> = gaps
        .iter()
        .map(|g| collision_experiment(CollisionKind::Overtaking, *g, 0.05, 10.0, &opts).unwrap().crossing)
        .collect();
    assert!(!crossings[0] && crossings[2], "{crossings:?}");
    for g in gaps {
        let r = collision_experiment(CollisionKind::Overtaking, g, 0.0, 10.0, &opts).unwrap();
        assert!(!r.crossing && r.min_separation() > 0.0, "gap {g}");
    }
}

fn endpoints(seed: u64, n: usize) -> (Points, Points) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q0: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let q1: Vec<f64> = q0.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    (Points::new(2, q0).unwrap(), Points::new(2, q1).unwrap())
}

#[test]
fn shooting_matches_the_path_oracle() {
    for (seed, n, sigma2) in [(1, 1, 0.0), (2, 2, 0.0), (3, 2, 0.3), (4, 2, 2.0)] {
        let (q0, q1) = endpoints(seed, n);
        let s = shoot_bvp(&q0, &q1, sigma2, gauss(2), &ShootingOptions::default()).unwrap();
        let p = optimize_path(&q0, &q1, sigma2, gauss(2), &PathOptions::default()).unwrap();
        assert!(s.endpoint_error <= 1e-10);
        let rel = (p.energy - s.energy).abs() / s.energy;
        assert!(rel <= 5e-3, "seed {seed}: shooting {} path {}", s.energy, p.energy);
    }
}

#[test]
fn single_landmark_energy_is_distance_over_scale() {
    let k = KernelSpec::gaussian(0.7, 2.0, 2).unwrap();
    let q0 = Points::new(2, vec![0.0, 0.0]).unwrap();
    let q1 = Points::new(2, vec![0.3, -0.4]).unwrap();
    for sigma2 in [0.0, 0.5] {
        let s = shoot_bvp(&q0, &q1, sigma2, k, &ShootingOptions::default()).unwrap();
        let expected = 0.25 / (2.0 + sigma2);
        assert!((s.energy - expected).abs() <= 1e-9 * expected);
    }
}

#[test]
fn large_sigma_energy_approaches_template_cost() {
    let (q0, q1) = endpoints(9, 2);
    let d2: f64 = q0.as_slice().iter().zip(q1.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    let mut prev = f64::INFINITY;
    for sigma2 in [10.0, 100.0, 1000.0] {
        let s = shoot_bvp(&q0, &q1, sigma2, gauss(2), &ShootingOptions::default()).unwrap();
        let p = optimize_path(&q0, &q1, sigma2, gauss(2), &PathOptions::default()).unwrap();
        assert!((p.energy - s.energy).abs() <= 5e-3 * s.energy);
        let gap = (s.energy * sigma2 / d2 - 1.0).abs();
        assert!(gap < prev);
        prev = gap;
    }
    assert!(prev <= 5e-3, "{prev}");
}

#[test]
fn path_oracle_gradient_matches_differences() {
    let (q0, q1) = endpoints(5, 3);
    let problem = PathProblem {
        q0,
        q1,
        sigma2: 0.2,
        kernel: gauss(2),
        steps: 8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut x = problem.linear_interior();
    x.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    let (_, g) = problem.energy_grad(&x).unwrap();
    let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut f = |y: &[f64]| problem.energy_grad(y).unwrap().0;
    for _ in 0..24 {
        let i = rng.random_range(0..x.len());
        let fd = central_difference(&mut f, &x, i, 1e-5);
        let err = (fd - g[i]).abs() / g[i].abs().max(1e-3 * gmax);
        assert!(err <= 1e-5, "coordinate {i}: {fd} vs {}", g[i]);
    }
}

#[test]
fn matching_energy_is_symmetric_under_swap() {
    for (seed, sigma2) in [(11, 0.0), (12, 0.1), (13, 1.0)] {
        let (q0, q1) = endpoints(seed, 3);
        let fwd = shoot_bvp(&q0, &q1, sigma2, gauss(2), &ShootingOptions::default()).unwrap();
        let back = shoot_bvp(&q1, &q0, sigma2, gauss(2), &ShootingOptions::default()).unwrap();
        assert!((fwd.energy - back.energy).abs() <= 1e-3 * fwd.energy);
    }
}

#[test]
fn identical_endpoints_need_no_momentum() {
    let (q0, _) = endpoints(14, 3);
    let s = shoot_bvp(&q0, &q0, 0.1, gauss(2), &ShootingOptions::default()).unwrap();
    assert_eq!(s.energy, 0.0);
    assert!(s.phase.p.as_slice().iter().all(|v| *v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn energy_is_nonnegative_and_reflection_conjugates(seed in any::<u64>(), sigma2 in 0.0f64..1.0) {
        let phase = random_phase(seed, 3, 1, sigma2);
        prop_assert!(phase.energy() >= 0.0);
        let flip = |p: &Points| Points::new(1, p.as_slice().iter().map(|v| -v).collect()).unwrap();
        let mirrored = LandmarkPhase::new(flip(&phase.q), flip(&phase.p), sigma2, phase.kernel).unwrap();
        let a = integrate_ivp(&phase, 0.5, 0.05).unwrap();
        let b = integrate_ivp(&mirrored, 0.5, 0.05).unwrap();
        for (x, y) in a.last().q.as_slice().iter().zip(b.last().q.as_slice()) {
            prop_assert!((x + y).abs() <= 1e-12);
        }
    }
}
