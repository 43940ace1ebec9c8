use nalgebra::SymmetricEigen;
use serde::Serialize;

use super::{Graph, GraphError};
use crate::lanczos::{extreme_eigenpair, LanczosOptions, Which};
use crate::scalar::Real;

/// Largest `n` solved with a dense symmetric eigendecomposition.
pub const DENSE_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMethod {
    DenseEigensolve,
    Iterative,
}

/// Second-smallest eigenvalue of `L psi = lambda D psi`.
#[derive(Debug, Clone)]
pub struct SpectralReport<T> {
    pub lambda_star: T,
    pub method: GapMethod,
    /// `|N v - lambda v|` for the normalized operator `N = D^-1/2 L D^-1/2`.
    pub residual: T,
    /// Minimizer of the gap's variational problem: `sum d_x psi_x^2 = 1`,
    /// `sum d_x psi_x = 0`.
    pub eigenvector: Vec<T>,
}

/// Spectral gap with the dense route up to [`DENSE_THRESHOLD`] vertices and
/// Lanczos above.
pub fn spectral_gap<T: Real>(g: &Graph) -> Result<SpectralReport<T>, GraphError> {
    let method = if g.n() <= DENSE_THRESHOLD { GapMethod::DenseEigensolve } else { GapMethod::Iterative };
    spectral_gap_with(g, method)
}

pub fn spectral_gap_with<T: Real>(g: &Graph, method: GapMethod) -> Result<SpectralReport<T>, GraphError> {
    let n = g.n();
    let inv_sqrt_deg: Vec<T> = g.deg().iter().map(|&d| T::one() / T::from_count(d).sqrt()).collect();
    let (lambda, v, residual) = match method {
        GapMethod::DenseEigensolve => {
            let mut nrm = g.laplacian::<T>();
            for i in 0..n {
                for j in 0..n {
                    nrm[(i, j)] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
                }
            }
            let eig = SymmetricEigen::new(nrm.clone());
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap_or(std::cmp::Ordering::Equal)
            });
            let idx = order[1];
            let lambda = eig.eigenvalues[idx];
            let v = eig.eigenvectors.column(idx).clone_owned();
            let r = (&nrm * &v - &v * lambda).norm();
            (lambda, v.iter().copied().collect::<Vec<T>>(), r)
        }
        GapMethod::Iterative => {
            let sqrt_deg: Vec<T> = g.deg().iter().map(|&d| T::from_count(d).sqrt()).collect();
            let scale = T::from_count(g.two_m()).sqrt();
            let ground: Vec<T> = sqrt_deg.iter().map(|&s| s / scale).collect();
            let apply = |x: &[T], y: &mut [T]| {
                let scaled: Vec<T> = x.iter().zip(&inv_sqrt_deg).map(|(&a, &b)| a * b).collect();
                g.laplacian_apply(&scaled, y);
                for (yi, &b) in y.iter_mut().zip(&inv_sqrt_deg) {
                    *yi *= b;
                }
            };
            let pair = extreme_eigenpair(n, apply, &[ground], Which::Smallest, &LanczosOptions::default());
            if !pair.converged {
                return Err(GraphError::SolverFailure(format!(
                    "lanczos did not converge (residual {:e})",
                    pair.residual.as_f64()
                )));
            }
            (pair.value, pair.vector, pair.residual)
        }
    };
    // psi = D^-1/2 v has sum d psi^2 = |v|^2 = 1
    let eigenvector = v.iter().zip(&inv_sqrt_deg).map(|(&a, &b)| a * b).collect();
    Ok(SpectralReport { lambda_star: lambda, method, residual, eigenvector })
}
