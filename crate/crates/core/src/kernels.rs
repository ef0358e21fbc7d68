//! Stationary positive-definite kernels and Gram systems.
//!
//! A kernel is stored through its profile `φ(d)` with `k(x, y) = φ(x − y)`,
//! so `∇₁k = ∂φ`, `∇₂k = −∂φ` and `∇₁∇₂ᵀk = −∂²φ`. Points live in one or two
//! dimensions; small vectors are carried as `[f64; 2]` with the second slot
//! left at zero in 1D.

use crate::error::{ensure_positive, Error, Result};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// `scale · exp(−|x−y|² / 2w²)`
    Gaussian,
    /// `scale · exp(−|x−y| / w)`, the Green's function of `1 − w²∂ₓ²` in 1D
    /// (up to normalization). Only first derivatives are available.
    HelmholtzGreen,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::HelmholtzGreen => "helmholtz-green",
        }
    }

    fn max_order(self) -> usize {
        match self {
            KernelFamily::Gaussian => 3,
            KernelFamily::HelmholtzGreen => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub width: f64,
    pub scale: f64,
    pub dim: usize,
}

/// Value, gradient and Hessian of the profile at one offset.
#[derive(Debug, Clone, Copy)]
pub struct ProfileDerivs {
    pub value: f64,
    pub grad: Vec2,
    pub hess: Mat2,
}

/// Result of [`kernel_eval`].
#[derive(Debug, Clone, PartialEq)]
pub enum KernelValue {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl KernelSpec {
    pub fn new(family: KernelFamily, width: f64, scale: f64, dim: usize) -> Result<Self> {
        ensure_positive("width", width)?;
        ensure_positive("scale", scale)?;
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: format!("must be 1 or 2, got {dim}"),
            });
        }
        Ok(Self {
            family,
            width,
            scale,
            dim,
        })
    }

    pub fn gaussian(width: f64, scale: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, width, scale, dim)
    }

    pub fn helmholtz_green(width: f64, scale: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::HelmholtzGreen, width, scale, dim)
    }

    /// Fails unless the family supports derivatives up to `order`.
    pub fn require_order(&self, order: usize) -> Result<()> {
        if order > self.family.max_order() {
            Err(Error::UnsupportedOrder {
                order,
                family: self.family.name(),
            })
        } else {
            Ok(())
        }
    }

    pub(crate) fn offset(&self, x: &[f64], y: &[f64]) -> Vec2 {
        let mut d = [0.0; 2];
        for i in 0..self.dim {
            d[i] = x[i] - y[i];
        }
        d
    }

    pub fn value_at(&self, d: Vec2) -> f64 {
        let r2 = d[0] * d[0] + d[1] * d[1];
        match self.family {
            KernelFamily::Gaussian => self.scale * (-0.5 * r2 / (self.width * self.width)).exp(),
            KernelFamily::HelmholtzGreen => self.scale * (-r2.sqrt() / self.width).exp(),
        }
    }

    /// `∂φ(d)`. For the Helmholtz family the subgradient 0 is used at `d = 0`.
    pub fn grad_at(&self, d: Vec2) -> Vec2 {
        let v = self.value_at(d);
        match self.family {
            KernelFamily::Gaussian => {
                let c = -v / (self.width * self.width);
                [c * d[0], c * d[1]]
            }
            KernelFamily::HelmholtzGreen => {
                let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
                if r == 0.0 {
                    [0.0; 2]
                } else {
                    let c = -v / (r * self.width);
                    [c * d[0], c * d[1]]
                }
            }
        }
    }

    /// Value, gradient and Hessian of the gaussian profile.
    ///
    /// Panics for families without second derivatives; callers check
    /// [`KernelSpec::require_order`] once up front.
    pub fn derivs_at(&self, d: Vec2) -> ProfileDerivs {
        assert_eq!(self.family, KernelFamily::Gaussian, "second derivatives need a gaussian kernel");
        let v = self.value_at(d);
        let iw2 = 1.0 / (self.width * self.width);
        let g = [-v * iw2 * d[0], -v * iw2 * d[1]];
        let mut h = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let delta = if i == j { 1.0 } else { 0.0 };
                h[i][j] = v * (d[i] * d[j] * iw2 * iw2 - delta * iw2);
            }
        }
        // 1D kernels carry no second component.
        if self.dim == 1 {
            h[0][1] = 0.0;
            h[1][0] = 0.0;
            h[1][1] = 0.0;
        }
        ProfileDerivs {
            value: v,
            grad: g,
            hess: h,
        }
    }

    /// Third derivative tensor `∂³φ(d)` of the gaussian profile.
    pub fn third_at(&self, d: Vec2) -> [[[f64; 2]; 2]; 2] {
        assert_eq!(self.family, KernelFamily::Gaussian, "third derivatives need a gaussian kernel");
        let v = self.value_at(d);
        let iw2 = 1.0 / (self.width * self.width);
        let mut t = [[[0.0; 2]; 2]; 2];
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..self.dim {
            for j in 0..self.dim {
                for k in 0..self.dim {
                    t[i][j][k] = v
                        * (-d[i] * d[j] * d[k] * iw2 * iw2 * iw2
                            + (delta(i, j) * d[k] + delta(i, k) * d[j] + delta(j, k) * d[i])
                                * iw2
                                * iw2);
                }
            }
        }
        t
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.value_at(self.offset(x, y))
    }

    /// `∇₁k(x, y)`, the gradient in the first argument.
    pub fn grad_first(&self, x: &[f64], y: &[f64]) -> Vec2 {
        self.grad_at(self.offset(x, y))
    }

    /// `∇₂k(x, y) = −∇₁k(x, y)`.
    pub fn grad_second(&self, x: &[f64], y: &[f64]) -> Vec2 {
        let g = self.grad_first(x, y);
        [-g[0], -g[1]]
    }

    /// `∇₁∇₂ᵀk(x, y)`, entry `(i, j) = ∂²k / ∂xᵢ∂yⱼ`.
    pub fn cross_hessian(&self, x: &[f64], y: &[f64]) -> Mat2 {
        let h = self.derivs_at(self.offset(x, y)).hess;
        [[-h[0][0], -h[0][1]], [-h[1][0], -h[1][1]]]
    }
}

/// Kernel or one of its derivatives at a pair of points: `k`, `∇₂k`, or `∇₁∇₂ᵀk`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64], order: usize) -> Result<KernelValue> {
    if order > 2 {
        return Err(Error::UnsupportedOrder {
            order,
            family: spec.family.name(),
        });
    }
    spec.require_order(order)?;
    check_point(spec, x)?;
    check_point(spec, y)?;
    let d = spec.dim;
    Ok(match order {
        0 => KernelValue::Scalar(spec.value(x, y)),
        1 => KernelValue::Vector(spec.grad_second(x, y)[..d].to_vec()),
        _ => {
            let h = spec.cross_hessian(x, y);
            KernelValue::Matrix((0..d).map(|i| h[i][..d].to_vec()).collect())
        }
    })
}

fn check_point(spec: &KernelSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.dim {
        return Err(Error::ShapeMismatch {
            expected: format!("point of dimension {}", spec.dim),
            got: format!("length {}", x.len()),
        });
    }
    Ok(())
}

/// A set of points in `dim` dimensions, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("a multiple of {dim} coordinates"),
                got: coords.len().to_string(),
            });
        }
        Ok(Self { dim, coords })
    }

    pub fn zeros(dim: usize, count: usize) -> Self {
        Self {
            dim,
            coords: vec![0.0; dim * count],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn point_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }
}

/// Default ridge relative to the kernel scale.
pub const DEFAULT_RIDGE: f64 = 1e-10;

/// Scalar Gram matrix of a point set with a ridge term and its Cholesky factor.
///
/// Vector-valued kernels of the form `k(x, y)·I_d` share this Gram matrix;
/// right-hand sides of length `Q·d` are solved componentwise.
#[derive(Debug, Clone)]
pub struct GramSystem {
    points: Points,
    kernel: KernelSpec,
    ridge: f64,
    gram: Vec<f64>,
    chol: Vec<f64>,
}

impl GramSystem {
    pub fn new(points: Points, kernel: KernelSpec) -> Result<Self> {
        let ridge = DEFAULT_RIDGE * kernel.scale;
        Self::with_ridge(points, kernel, ridge)
    }

    pub fn with_ridge(points: Points, kernel: KernelSpec, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "ridge",
                reason: format!("must be non-negative, got {ridge}"),
            });
        }
        if points.dim() != kernel.dim {
            return Err(Error::ShapeMismatch {
                expected: format!("points of dimension {}", kernel.dim),
                got: points.dim().to_string(),
            });
        }
        if points.as_slice().iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: "non-finite coordinate".into(),
            });
        }
        let n = points.len();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = kernel.value(points.point(i), points.point(j));
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }
        let mut a = gram.clone();
        for i in 0..n {
            a[i * n + i] += ridge;
        }
        let chol = cholesky(&mut a, n)?;
        Ok(Self {
            points,
            kernel,
            ridge,
            gram,
            chol,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Row-major scalar Gram matrix, without the ridge.
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    /// `(gram + ridge·I)·c`, with `c` scalar (length Q) or vector-valued (length Q·d).
    pub fn multiply(&self, c: &[f64]) -> Result<Vec<f64>> {
        let (n, comps) = self.layout(c.len())?;
        let mut out = vec![0.0; c.len()];
        for i in 0..n {
            for j in 0..n {
                let g = self.gram[i * n + j] + if i == j { self.ridge } else { 0.0 };
                for a in 0..comps {
                    out[i * comps + a] += g * c[j * comps + a];
                }
            }
        }
        Ok(out)
    }

    /// Solves `(gram + ridge·I)·c = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (n, comps) = self.layout(rhs.len())?;
        let mut out = vec![0.0; rhs.len()];
        let mut col = vec![0.0; n];
        for a in 0..comps {
            for i in 0..n {
                col[i] = rhs[i * comps + a];
            }
            cholesky_solve(&self.chol, n, &mut col);
            for i in 0..n {
                out[i * comps + a] = col[i];
            }
        }
        Ok(out)
    }

    fn layout(&self, len: usize) -> Result<(usize, usize)> {
        let n = self.len();
        if len == n {
            Ok((n, 1))
        } else if len == n * self.kernel.dim {
            Ok((n, self.kernel.dim))
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{} or {}", n, n * self.kernel.dim),
                got: len.to_string(),
            })
        }
    }
}

/// `gram_solve` in free-function form.
pub fn gram_solve(system: &GramSystem, rhs: &[f64]) -> Result<Vec<f64>> {
    system.solve(rhs)
}

/// In-place lower Cholesky factor of a row-major SPD matrix. Rejects pivots
/// below `1e-12 · max diagonal`.
pub(crate) fn cholesky(a: &mut [f64], n: usize) -> Result<Vec<f64>> {
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let floor = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > floor) {
            return Err(Error::Conditioning { pivot: d, row: j });
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(l)
}

pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}
