use nalgebra::{DMatrix, DVector};

use super::{flow_endpoint, LandmarkPhase};
use crate::error::{Error, Result};
use crate::kernels::{GramSystem, KernelSpec, Points, DEFAULT_RIDGE};

#[derive(Debug, Clone)]
pub struct ShootingOptions {
    /// Integration steps over the unit time interval.
    pub steps: usize,
    /// Endpoint tolerance on `|q(1) − q1|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            steps: 100,
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    /// Initial state with the optimal momentum.
    pub phase: LandmarkPhase,
    /// Geodesic energy `h(0)`, which equals the action over `[0, 1]`.
    pub energy: f64,
    pub endpoint_error: f64,
    pub iterations: usize,
}

fn residual(phase: &LandmarkPhase, q1: &Points, steps: usize) -> Result<Vec<f64>> {
    let end = flow_endpoint(phase, steps)?;
    Ok(end
        .q
        .as_slice()
        .iter()
        .zip(q1.as_slice())
        .map(|(a, b)| a - b)
        .collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Finds `p(0)` so that the geodesic from `q0` lands on `q1` at `t = 1`.
///
/// Newton iteration on the endpoint map with a central-difference Jacobian
/// and step halving; the initial guess solves `(K(q0) + σ²I) p = q1 − q0`.
pub fn shoot_bvp(
    q0: &Points,
    q1: &Points,
    sigma2: f64,
    kernel: KernelSpec,
    opts: &ShootingOptions,
) -> Result<ShootingResult> {
    if q0.len() != q1.len() || q0.dim() != q1.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} landmarks", q0.len()),
            got: format!("{} landmarks", q1.len()),
        });
    }
    if opts.steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "must be positive".into(),
        });
    }
    let n = q0.as_slice().len();
    let delta: Vec<f64> = q1.as_slice().iter().zip(q0.as_slice()).map(|(a, b)| a - b).collect();
    let gram = GramSystem::with_ridge(q0.clone(), kernel, sigma2 + DEFAULT_RIDGE * kernel.scale)?;
    let p0 = gram.solve(&delta)?;
    let mut phase = LandmarkPhase::new(q0.clone(), Points::new(q0.dim(), p0)?, sigma2, kernel)?;
    let mut f = residual(&phase, q1, opts.steps)?;
    let mut fnorm = norm(&f);
    let mut iterations = 0;
    while fnorm > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: fnorm,
            });
        }
        iterations += 1;
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + phase.p.as_slice()[j].abs());
            let mut plus = phase.clone();
            plus.p.as_mut_slice()[j] += h;
            let mut minus = phase.clone();
            minus.p.as_mut_slice()[j] -= h;
            let fp = residual(&plus, q1, opts.steps)?;
            let fm = residual(&minus, q1, opts.steps)?;
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let step = jac
            .lu()
            .solve(&DVector::from_iterator(n, f.iter().map(|v| -v)))
            .ok_or_else(|| Error::Degenerate("singular shooting Jacobian".into()))?;
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let mut trial = phase.clone();
            for (pi, si) in trial.p.as_mut_slice().iter_mut().zip(step.iter()) {
                *pi += scale * si;
            }
            if let Ok(ft) = residual(&trial, q1, opts.steps) {
                let tn = norm(&ft);
                if tn < fnorm {
                    phase = trial;
                    f = ft;
                    fnorm = tn;
                    improved = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !improved {
            return Err(Error::NonConvergence {
                iterations,
                residual: fnorm,
            });
        }
    }
    let energy = phase.energy();
    Ok(ShootingResult {
        phase,
        energy,
        endpoint_error: fnorm,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_endpoints_give_zero_momentum() {
        let k = KernelSpec::gaussian(1.0, 1.0, 2).unwrap();
        let q = Points::new(2, vec![0.0, 0.0, 1.0, 0.5]).unwrap();
        let r = shoot_bvp(&q, &q, 0.1, k, &ShootingOptions::default()).unwrap();
        assert!(r.phase.p.as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(r.energy, 0.0);
    }

    #[test]
    fn single_landmark_energy() {
        let k = KernelSpec::gaussian(1.0, 1.5, 1).unwrap();
        let q0 = Points::new(1, vec![0.2]).unwrap();
        let q1 = Points::new(1, vec![1.0]).unwrap();
        for sigma2 in [0.0, 0.3, 10.0] {
            let r = shoot_bvp(&q0, &q1, sigma2, k, &ShootingOptions::default()).unwrap();
            let expected = 0.64 / (1.5 + sigma2);
            assert!((r.energy - expected).abs() < 1e-8 * expected, "{} vs {expected}", r.energy);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let k = KernelSpec::gaussian(0.3, 1.0, 1).unwrap();
        let q0 = Points::new(1, vec![-1.0, 1.0]).unwrap();
        let q1 = Points::new(1, vec![1.0, -1.0]).unwrap();
        let opts = ShootingOptions {
            max_iter: 1,
            ..Default::default()
        };
        assert!(matches!(shoot_bvp(&q0, &q1, 0.0, k, &opts), Err(Error::NonConvergence { .. })));
    }
}
