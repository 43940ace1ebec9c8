//! The zero-average Gaussian free field on the vertices of a graph.
//!
//! The covariance is `Q L+ Q^T` where `L+` is the Moore-Penrose pseudoinverse
//! of the combinatorial Laplacian and `Q = I - 1 deg^T / 2|E|` removes the
//! degree-weighted mean. It is the unique PSD matrix with `sigma deg = 0` whose
//! Dirichlet pairings have covariance `Cov[E(phi, f), E(phi, g)] = E(f, g)`.
//!
//! Three samplers produce the same law: a dense eigendecomposition of `L`, a
//! Cholesky factor of the (ridged) covariance, and a matrix-free Chebyshev
//! approximation of `L^{-1/2}` for graphs past the dense threshold.

use std::io::{self, Write};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, DENSE_THRESHOLD};
use crate::lanczos::{extreme_eigenpair, LanczosOptions, Which};
use crate::scalar::{dot, Real};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GffError {
    #[error("n = {0} exceeds the dense threshold; use the iterative sampler")]
    TooLarge(usize),
    #[error("factorization failed: {0}")]
    FactorizationFailure(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Covariance matrix of the zero-average GFF (the zero-average Green function).
#[derive(Debug, Clone)]
pub struct Covariance<T: Real> {
    pub sigma: DMatrix<T>,
}

/// Exact covariance `Q L+ Q^T`. Dense; limited to [`DENSE_THRESHOLD`] vertices.
pub fn covariance_matrix<T: Real>(g: &Graph) -> Result<Covariance<T>, GffError> {
    let n = g.n();
    if n > DENSE_THRESHOLD {
        return Err(GffError::TooLarge(n));
    }
    let inv_n = T::one() / T::from_count(n);
    // L + J/n is positive definite and (L + J/n)^-1 = L+ + J/n
    let mut shifted = g.laplacian::<T>();
    shifted.add_scalar_mut(inv_n);
    let chol = Cholesky::new(shifted)
        .ok_or_else(|| GffError::FactorizationFailure("L + J/n not positive definite".into()))?;
    let mut pinv = chol.inverse();
    pinv.add_scalar_mut(-inv_n);

    let deg = g.degree_vector::<T>();
    let two_m = T::from_count(g.two_m());
    // X = L+ Q^T, then sigma = Q X
    let p_deg = &pinv * &deg;
    let mut x = pinv;
    for i in 0..n {
        let shift = p_deg[i] / two_m;
        for j in 0..n {
            x[(i, j)] -= shift;
        }
    }
    let col_means = deg.transpose() * &x;
    for j in 0..n {
        let shift = col_means[j] / two_m;
        for i in 0..n {
            x[(i, j)] -= shift;
        }
    }
    let sigma = (&x + x.transpose()) * T::lit(0.5);
    Ok(Covariance { sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerRoute {
    Eigen,
    Cholesky,
    Iterative,
}

impl SamplerRoute {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerRoute::Eigen => "eigen",
            SamplerRoute::Cholesky => "cholesky",
            SamplerRoute::Iterative => "iterative",
        }
    }
}

impl std::str::FromStr for SamplerRoute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eigen" => Ok(Self::Eigen),
            "cholesky" => Ok(Self::Cholesky),
            "iterative" => Ok(Self::Iterative),
            other => Err(format!("unknown sampler route '{other}'")),
        }
    }
}

/// One realization of the field with the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample<T> {
    pub phi: Vec<T>,
    pub seed: u64,
    pub route: SamplerRoute,
}

impl<T: Real> FieldSample<T> {
    /// `sum_x d_x phi(x)`.
    pub fn weighted_sum(&self, g: &Graph) -> T {
        g.deg().iter().zip(&self.phi).fold(T::zero(), |acc, (&d, &p)| acc + T::from_count(d) * p)
    }

    /// CSV dump with header `vertex,phi`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "vertex,phi")?;
        for (x, p) in self.phi.iter().enumerate() {
            writeln!(w, "{x},{}", p.as_f64())?;
        }
        Ok(())
    }
}

/// Chebyshev expansion of `lambda^{-1/2}` on `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct InvSqrtPoly<T> {
    pub lo: T,
    pub hi: T,
    pub coeffs: Vec<T>,
    /// Largest relative error `|p(x) sqrt(x) - 1|` seen on the check grid.
    pub max_rel_error: f64,
}

/// Target sup-norm relative error of the Chebyshev approximation.
pub const CHEBYSHEV_TOL: f64 = 1e-4;
const CHEBYSHEV_MAX_DEGREE: usize = 4000;

impl<T: Real> InvSqrtPoly<T> {
    pub fn fit(lo: f64, hi: f64, tol: f64) -> Result<Self, GffError> {
        let (lo, hi) = if hi - lo < 1e-9 * hi { (lo * 0.9, hi * 1.1) } else { (lo, hi) };
        let f = |x: f64| 1.0 / x.sqrt();
        let to_x = |t: f64| 0.5 * (hi + lo) + 0.5 * (hi - lo) * t;
        let mut degree = 8;
        loop {
            let nodes = degree + 1;
            let values: Vec<f64> = (0..nodes)
                .map(|k| f(to_x((std::f64::consts::PI * (k as f64 + 0.5) / nodes as f64).cos())))
                .collect();
            let mut coeffs: Vec<f64> = (0..nodes)
                .map(|j| {
                    let s: f64 = values
                        .iter()
                        .enumerate()
                        .map(|(k, v)| v * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / nodes as f64).cos())
                        .sum();
                    2.0 * s / nodes as f64
                })
                .collect();
            coeffs[0] *= 0.5;
            let err = (0..=2000)
                .map(|i| {
                    let t = -1.0 + 2.0 * i as f64 / 2000.0;
                    (clenshaw_scalar(&coeffs, t) / f(to_x(t)) - 1.0).abs()
                })
                .fold(0.0, f64::max);
            if err <= tol {
                return Ok(Self {
                    lo: T::lit(lo),
                    hi: T::lit(hi),
                    coeffs: coeffs.into_iter().map(T::lit).collect(),
                    max_rel_error: err,
                });
            }
            if degree >= CHEBYSHEV_MAX_DEGREE {
                return Err(GffError::FactorizationFailure(format!(
                    "Chebyshev degree {degree} reached relative error {err:e} only"
                )));
            }
            degree = (degree * 3 / 2).min(CHEBYSHEV_MAX_DEGREE);
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `p(L) x` by the Clenshaw recurrence, one sparse Laplacian product per degree.
    pub fn apply(&self, g: &Graph, x: &[T]) -> Vec<T> {
        let n = x.len();
        let two = T::lit(2.0);
        let center = (self.hi + self.lo) / two;
        let half_width = (self.hi - self.lo) / two;
        // t(L) v = (L v - center v) / half_width
        let map = |v: &[T], out: &mut [T]| {
            g.laplacian_apply(v, out);
            for (o, &vi) in out.iter_mut().zip(v) {
                *o = (*o - center * vi) / half_width;
            }
        };
        let mut b1 = vec![T::zero(); n];
        let mut b2 = vec![T::zero(); n];
        let mut tmp = vec![T::zero(); n];
        for c in self.coeffs.iter().skip(1).rev() {
            map(&b1, &mut tmp);
            for i in 0..n {
                let next = *c * x[i] + two * tmp[i] - b2[i];
                b2[i] = b1[i];
                b1[i] = next;
            }
        }
        map(&b1, &mut tmp);
        (0..n).map(|i| self.coeffs[0] * x[i] + tmp[i] - b2[i]).collect()
    }
}

fn clenshaw_scalar(coeffs: &[f64], t: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in coeffs.iter().skip(1).rev() {
        let next = c + 2.0 * t * b1 - b2;
        b2 = b1;
        b1 = next;
    }
    coeffs[0] + t * b1 - b2
}

#[derive(Debug, Clone)]
enum Factor<T: Real> {
    /// Columns `v_k / sqrt(lambda_k)` over the positive eigenpairs of `L`.
    Eigen { weights: DMatrix<T>, eigenvalues: Vec<T> },
    Cholesky { lower: DMatrix<T> },
    Iterative { graph: Graph, poly: InvSqrtPoly<T> },
}

/// Reusable, immutable field sampler. [`Sampler::sample`] is a pure function
/// of the seed.
#[derive(Debug, Clone)]
pub struct Sampler<T: Real> {
    route: SamplerRoute,
    deg: Vec<T>,
    two_m: T,
    factor: Factor<T>,
}

/// Diagonal ridge, relative to `trace(sigma) / n`, added before the Cholesky factorization.
pub const CHOLESKY_RIDGE: f64 = 1e-12;

pub fn make_sampler<T: Real>(g: &Graph, route: SamplerRoute) -> Result<Sampler<T>, GffError> {
    let n = g.n();
    let factor = match route {
        SamplerRoute::Eigen => {
            if n > DENSE_THRESHOLD {
                return Err(GffError::TooLarge(n));
            }
            let eig = SymmetricEigen::new(g.laplacian::<T>());
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap_or(std::cmp::Ordering::Equal)
            });
            // connected graph: exactly one zero eigenvalue (constants)
            let positive = &order[1..];
            let lambda_max = eig.eigenvalues[order[n - 1]];
            if eig.eigenvalues[positive[0]] <= lambda_max * T::eps() * T::lit(1e3) {
                return Err(GffError::FactorizationFailure("Laplacian kernel has dimension > 1".into()));
            }
            let mut weights = DMatrix::zeros(n, n - 1);
            let mut eigenvalues = Vec::with_capacity(n - 1);
            for (col, &k) in positive.iter().enumerate() {
                let lam = eig.eigenvalues[k];
                let s = T::one() / lam.sqrt();
                for i in 0..n {
                    weights[(i, col)] = eig.eigenvectors[(i, k)] * s;
                }
                eigenvalues.push(lam);
            }
            Factor::Eigen { weights, eigenvalues }
        }
        SamplerRoute::Cholesky => {
            let mut sigma = covariance_matrix::<T>(g)?.sigma;
            let ridge = T::lit(CHOLESKY_RIDGE) * sigma.trace() / T::from_count(n);
            for i in 0..n {
                sigma[(i, i)] += ridge;
            }
            let chol = Cholesky::new(sigma)
                .ok_or_else(|| GffError::FactorizationFailure("ridged covariance not positive definite".into()))?;
            Factor::Cholesky { lower: chol.l() }
        }
        SamplerRoute::Iterative => {
            let (lo, hi) = laplacian_spectrum_bounds(g);
            let poly = InvSqrtPoly::fit(lo, hi, CHEBYSHEV_TOL)?;
            Factor::Iterative { graph: g.clone(), poly }
        }
    };
    Ok(Sampler {
        route,
        deg: g.deg().iter().map(|&d| T::from_count(d)).collect(),
        two_m: T::from_count(g.two_m()),
        factor,
    })
}

/// Bracket `[lo, hi]` around the nonzero spectrum of `L`, from Lanczos Ritz
/// values widened by their residuals.
fn laplacian_spectrum_bounds(g: &Graph) -> (f64, f64) {
    let n = g.n();
    let ones = vec![1.0 / (n as f64).sqrt(); n];
    let opts = LanczosOptions { tol: 1e-8, ..LanczosOptions::default() };
    let apply = |x: &[f64], y: &mut [f64]| g.laplacian_apply(x, y);
    let low = extreme_eigenpair(n, apply, std::slice::from_ref(&ones), Which::Smallest, &opts);
    let high = extreme_eigenpair(n, apply, std::slice::from_ref(&ones), Which::Largest, &opts);
    let lo = (low.value - 2.0 * low.residual).max(0.5 * low.value) * 0.99;
    let hi = ((high.value + 2.0 * high.residual) * 1.01).min(2.0 * g.d_max() as f64);
    (lo, hi)
}

impl<T: Real> Sampler<T> {
    pub fn route(&self) -> SamplerRoute {
        self.route
    }

    pub fn n(&self) -> usize {
        self.deg.len()
    }

    /// Positive Laplacian eigenvalues held by the eigen route.
    pub fn positive_eigenvalues(&self) -> Option<&[T]> {
        match &self.factor {
            Factor::Eigen { eigenvalues, .. } => Some(eigenvalues),
            _ => None,
        }
    }

    pub fn chebyshev(&self) -> Option<&InvSqrtPoly<T>> {
        match &self.factor {
            Factor::Iterative { poly, .. } => Some(poly),
            _ => None,
        }
    }

    pub fn sample(&self, seed: u64) -> FieldSample<T> {
        let n = self.n();
        let mut rng = seed::rng(seed);
        let mut normals = |k: usize| -> Vec<T> { (0..k).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect() };
        let raw: Vec<T> = match &self.factor {
            Factor::Eigen { weights, .. } => {
                let xi = DVector::from_vec(normals(n - 1));
                (weights * xi).iter().copied().collect()
            }
            Factor::Cholesky { lower } => {
                let xi = DVector::from_vec(normals(n));
                (lower * xi).iter().copied().collect()
            }
            Factor::Iterative { graph, poly } => {
                let mut xi = normals(n);
                let mean = xi.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(n);
                for v in xi.iter_mut() {
                    *v -= mean;
                }
                poly.apply(graph, &xi)
            }
        };
        FieldSample { phi: self.project(raw), seed, route: self.route }
    }

    /// Applies `Q`: subtracts the degree-weighted mean.
    fn project(&self, mut v: Vec<T>) -> Vec<T> {
        let c = dot(&self.deg, &v) / self.two_m;
        for x in v.iter_mut() {
            *x -= c;
        }
        v
    }
}

/// Dirichlet form `E(u, v) = sum over edges (u_x - u_y)(v_x - v_y)`.
pub fn dirichlet_pairing<T: Real>(g: &Graph, u: &[T], v: &[T]) -> Result<T, GffError> {
    for len in [u.len(), v.len()] {
        if len != g.n() {
            return Err(GffError::DimensionMismatch { expected: g.n(), got: len });
        }
    }
    Ok(g.edges().iter().fold(T::zero(), |acc, &(x, y)| acc + (u[x] - u[y]) * (v[x] - v[y])))
}
