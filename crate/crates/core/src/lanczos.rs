//! Restarted Lanczos with full reorthogonalization for one extreme eigenpair
//! of a symmetric operator, optionally restricted to the orthogonal
//! complement of known eigenvectors.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::scalar::{dot, norm, Real};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Which {
    Smallest,
    Largest,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LanczosOptions {
    pub max_krylov: usize,
    pub max_restarts: usize,
    /// Converged once the residual is below `tol * max(|theta|, 1)`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { max_krylov: 300, max_restarts: 60, tol: 1e-10, seed: 0x1a2c }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RitzPair<T> {
    pub value: T,
    pub vector: Vec<T>,
    /// Explicit residual norm `|A y - theta y|` with `|y| = 1`.
    pub residual: T,
    pub converged: bool,
}

fn project_out<T: Real>(w: &mut [T], basis: &[Vec<T>]) {
    for b in basis {
        let c = dot(w, b);
        for (wi, &bi) in w.iter_mut().zip(b) {
            *wi -= c * bi;
        }
    }
}

pub(crate) fn extreme_eigenpair<T, F>(
    dim: usize,
    apply: F,
    deflate: &[Vec<T>],
    which: Which,
    opts: &LanczosOptions,
) -> RitzPair<T>
where
    T: Real,
    F: Fn(&[T], &mut [T]),
{
    let effective = dim.saturating_sub(deflate.len()).max(1);
    let m_max = opts.max_krylov.min(effective).max(1);
    let tol = T::lit(opts.tol).max(T::eps() * T::lit(100.0));

    let mut rng = seed::rng(opts.seed);
    let mut start: Vec<T> = (0..dim).map(|_| T::lit(rng.random::<f64>() - 0.5)).collect();
    let mut best: Option<RitzPair<T>> = None;

    for _ in 0..=opts.max_restarts {
        project_out(&mut start, deflate);
        let s = norm(&start);
        for v in start.iter_mut() {
            *v /= s;
        }
        let mut basis: Vec<Vec<T>> = vec![start.clone()];
        let mut alpha: Vec<T> = Vec::new();
        let mut beta: Vec<T> = Vec::new();
        let mut w = vec![T::zero(); dim];
        let mut candidate: Option<(T, Vec<T>)> = None;

        for j in 0..m_max {
            apply(&basis[j], &mut w);
            project_out(&mut w, deflate);
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                project_out(&mut w, &basis);
                project_out(&mut w, deflate);
            }
            let b = norm(&w);
            let k = j + 1;
            let exhausted = k == m_max || b <= T::eps() * T::lit(1e3) * (a.abs() + T::one());
            if exhausted || k % 10 == 0 {
                let (theta, coords) = tridiagonal_extreme(&alpha, &beta, which);
                let est = b * coords[k - 1].abs();
                candidate = Some((theta, coords));
                if est <= tol * theta.abs().max(T::one()) || exhausted {
                    break;
                }
            }
            beta.push(b);
            basis.push(w.iter().map(|&x| x / b).collect());
        }

        let (theta, coords) = candidate.expect("at least one Ritz evaluation");
        let mut y = vec![T::zero(); dim];
        for (c, q) in coords.iter().zip(&basis) {
            for (yi, &qi) in y.iter_mut().zip(q) {
                *yi += *c * qi;
            }
        }
        project_out(&mut y, deflate);
        let ny = norm(&y);
        for v in y.iter_mut() {
            *v /= ny;
        }
        let theta = {
            apply(&y, &mut w);
            let rq = dot(&y, &w);
            if rq.is_finite() { rq } else { theta }
        };
        let mut r = w.clone();
        for (ri, &yi) in r.iter_mut().zip(&y) {
            *ri -= theta * yi;
        }
        project_out(&mut r, deflate);
        let residual = norm(&r);
        let converged = residual <= tol * theta.abs().max(T::one());
        let pair = RitzPair { value: theta, vector: y.clone(), residual, converged };
        let better = best.as_ref().is_none_or(|b| pair.residual < b.residual);
        if better {
            best = Some(pair);
        }
        if converged || m_max >= effective {
            break;
        }
        start = y;
    }
    best.expect("lanczos produced a Ritz pair")
}

fn tridiagonal_extreme<T: Real>(alpha: &[T], beta: &[T], which: Which) -> (T, Vec<T>) {
    let k = alpha.len();
    let mut t = DMatrix::<T>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let idx = (0..k)
        .reduce(|best, i| {
            let better = match which {
                Which::Smallest => eig.eigenvalues[i] < eig.eigenvalues[best],
                Which::Largest => eig.eigenvalues[i] > eig.eigenvalues[best],
            };
            if better { i } else { best }
        })
        .unwrap_or(0);
    (eig.eigenvalues[idx], eig.eigenvectors.column(idx).iter().copied().collect())
}
