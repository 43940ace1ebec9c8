//! Potential theory under the zero-average constraint, for vertex sets `K`.
//!
//! For `K` a nonempty proper subset of `V`:
//! - the killed Green function `g_{K^c}` is the inverse of the Laplacian
//!   restricted to `V \ K` (zero on `K`);
//! - `nu_K = 2|E| / sum_{x,y} d_x d_y g_{K^c}(x, y)` and the zero-average
//!   capacity is `2|E| nu_K`;
//! - the equilibrium potential `f_K = 1 - nu_K sum_y d_y g_{K^c}(y, .)` is the
//!   minimizer of `E(f, f)` subject to `f = 1` on `K` and `sum d_x f(x) = 0`.
//!
//! Capacities are computed both from the Green-sum formula and by solving the
//! constrained minimization through its KKT system, and the two are compared
//! in tests.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use serde::Serialize;
use thiserror::Error;

use crate::gff::dirichlet_pairing;
use crate::graph::{induced_components, Graph};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("bad vertex set: {0}")]
    BadK(String),
    #[error("linear solve failed: {0}")]
    SolverFailure(String),
    #[error("routes disagree by {0:e}")]
    RouteMismatch(f64),
}

/// Validated vertex set: sorted, deduplicated, nonempty and not all of `V`.
#[derive(Debug, Clone)]
pub(crate) struct VertexSet {
    pub members: Vec<usize>,
    pub inside: Vec<bool>,
    /// Vertices of `V \ K`, ascending.
    pub outside: Vec<usize>,
    /// Position of a vertex in `outside`, or `usize::MAX` for members of `K`.
    pub pos: Vec<usize>,
}

impl VertexSet {
    pub fn new(g: &Graph, k: &[usize]) -> Result<Self, PotentialError> {
        let n = g.n();
        if k.is_empty() {
            return Err(PotentialError::BadK("K is empty".into()));
        }
        let mut inside = vec![false; n];
        for &x in k {
            if x >= n {
                return Err(PotentialError::BadK(format!("vertex {x} out of range")));
            }
            inside[x] = true;
        }
        let members: Vec<usize> = (0..n).filter(|&x| inside[x]).collect();
        if members.len() == n {
            return Err(PotentialError::BadK("K = V has infinite capacity".into()));
        }
        let outside: Vec<usize> = (0..n).filter(|&x| !inside[x]).collect();
        let mut pos = vec![usize::MAX; n];
        for (i, &x) in outside.iter().enumerate() {
            pos[x] = i;
        }
        Ok(Self { members, inside, outside, pos })
    }

    /// Laplacian restricted to `V \ K` (Dirichlet conditions on `K`).
    fn dirichlet_laplacian<T: Real>(&self, g: &Graph) -> DMatrix<T> {
        let m = self.outside.len();
        let mut l = DMatrix::zeros(m, m);
        for (i, &x) in self.outside.iter().enumerate() {
            l[(i, i)] = T::from_count(g.deg()[x]);
            for &y in g.neighbors(x) {
                if !self.inside[y] {
                    l[(i, self.pos[y])] = -T::one();
                }
            }
        }
        l
    }

    fn cholesky<T: Real>(&self, g: &Graph) -> Result<Cholesky<T, Dyn>, PotentialError> {
        Cholesky::new(self.dirichlet_laplacian(g))
            .ok_or_else(|| PotentialError::SolverFailure("Dirichlet Laplacian not positive definite".into()))
    }
}

/// Solves `L_{K^c} w = d_{K^c}` and returns `w` extended by zero on `K`
/// (i.e. `w(x) = sum_y d_y g_{K^c}(y, x)`) together with `d^T w`, the
/// Green sum `sum_{x,y} d_x d_y g_{K^c}(x, y)`.
pub(crate) fn degree_potential<T: Real>(g: &Graph, ks: &VertexSet) -> Result<(Vec<T>, T), PotentialError> {
    let chol = ks.cholesky::<T>(g)?;
    let rhs = DVector::from_iterator(ks.outside.len(), ks.outside.iter().map(|&x| T::from_count(g.deg()[x])));
    let sol = chol.solve(&rhs);
    let mut w = vec![T::zero(); g.n()];
    let mut sum = T::zero();
    for (i, &x) in ks.outside.iter().enumerate() {
        w[x] = sol[i];
        sum += rhs[i] * sol[i];
    }
    Ok((w, sum))
}

/// Killed Green function `g_{K^c}` as an `n x n` matrix, zero on rows and columns of `K`.
#[derive(Debug, Clone)]
pub struct KilledGreen<T: Real> {
    pub k_set: Vec<usize>,
    pub green: DMatrix<T>,
}

pub fn killed_green<T: Real>(g: &Graph, k: &[usize]) -> Result<KilledGreen<T>, PotentialError> {
    let ks = VertexSet::new(g, k)?;
    let inv = ks.cholesky::<T>(g)?.inverse();
    let mut green = DMatrix::zeros(g.n(), g.n());
    for (i, &x) in ks.outside.iter().enumerate() {
        for (j, &y) in ks.outside.iter().enumerate() {
            green[(x, y)] = (inv[(i, j)] + inv[(j, i)]) * T::lit(0.5);
        }
    }
    Ok(KilledGreen { k_set: ks.members, green })
}

/// Hitting distribution of `K` for the simple random walk.
#[derive(Debug, Clone)]
pub struct HittingDistribution<T: Real> {
    pub k_set: Vec<usize>,
    /// `prob[(y, j)] = P_y[X_{H_K} = k_set[j]]`, one row per start vertex.
    pub prob: DMatrix<T>,
}

impl<T: Real> HittingDistribution<T> {
    /// `E_y[phi(X_{H_K})]` for boundary data listed in `k_set` order.
    pub fn expectation(&self, boundary: &[T]) -> Vec<T> {
        (&self.prob * DVector::from_column_slice(boundary)).iter().copied().collect()
    }
}

/// Solves the harmonic system `h(y) = sum_z P(y, z) h(z)` off `K` with
/// `h = delta_x` on `K`, for every target `x` in `K` at once.
pub fn hitting_distribution<T: Real>(g: &Graph, k: &[usize]) -> Result<HittingDistribution<T>, PotentialError> {
    let ks = VertexSet::new(g, k)?;
    let (m, kk) = (ks.outside.len(), ks.members.len());
    let col_of = |x: usize| ks.members.binary_search(&x).ok();
    // (I - P_{K^c K^c}) h = P_{K^c K} delta
    let mut a = DMatrix::<T>::identity(m, m);
    let mut rhs = DMatrix::<T>::zeros(m, kk);
    for (i, &y) in ks.outside.iter().enumerate() {
        let step = T::one() / T::from_count(g.deg()[y]);
        for &z in g.neighbors(y) {
            if ks.inside[z] {
                rhs[(i, col_of(z).expect("member"))] += step;
            } else {
                a[(i, ks.pos[z])] -= step;
            }
        }
    }
    let sol = LU::new(a)
        .solve(&rhs)
        .ok_or_else(|| PotentialError::SolverFailure("singular hitting system".into()))?;
    let mut prob = DMatrix::zeros(g.n(), kk);
    for (j, &x) in ks.members.iter().enumerate() {
        prob[(x, j)] = T::one();
    }
    for (i, &y) in ks.outside.iter().enumerate() {
        for j in 0..kk {
            prob[(y, j)] = sol[(i, j)];
        }
    }
    Ok(HittingDistribution { k_set: ks.members, prob })
}

/// Last-exit decomposition: `P_y[X_{H_K} = z] = sum_w g_{K^c}(y, w) 1{w ~ z}`
/// for `y` outside `K`, point mass on `K`.
pub fn hitting_from_green<T: Real>(g: &Graph, kg: &KilledGreen<T>) -> HittingDistribution<T> {
    let n = g.n();
    let kk = kg.k_set.len();
    let mut inside = vec![false; n];
    for &x in &kg.k_set {
        inside[x] = true;
    }
    let mut prob = DMatrix::zeros(n, kk);
    for (j, &z) in kg.k_set.iter().enumerate() {
        prob[(z, j)] = T::one();
        for y in (0..n).filter(|&y| !inside[y]) {
            let mut acc = T::zero();
            for &w in g.neighbors(z) {
                acc += kg.green[(y, w)];
            }
            prob[(y, j)] = acc;
        }
    }
    HittingDistribution { k_set: kg.k_set.clone(), prob }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityRoute {
    GreenSum,
    Dirichlet,
}

#[derive(Debug, Clone)]
pub struct CapacityResult<T: Real> {
    pub k_set: Vec<usize>,
    pub nu: T,
    /// Zero-average capacity `2|E| nu`.
    pub cap: T,
    /// Equilibrium potential `f_K`.
    pub f_k: Vec<T>,
    pub route: CapacityRoute,
}

/// Capacity from `nu_K = 2|E| / sum d_x d_y g_{K^c}(x, y)`.
pub fn capacity_green<T: Real>(g: &Graph, k: &[usize]) -> Result<CapacityResult<T>, PotentialError> {
    let ks = VertexSet::new(g, k)?;
    let (w, green_sum) = degree_potential::<T>(g, &ks)?;
    let two_m = T::from_count(g.two_m());
    let nu = two_m / green_sum;
    let f_k = w.iter().map(|&wx| T::one() - nu * wx).collect();
    Ok(CapacityResult { k_set: ks.members, nu, cap: two_m * nu, f_k, route: CapacityRoute::GreenSum })
}

/// Capacity as the optimal energy of `min E(f, f)` s.t. `f = 1` on `K`,
/// `sum d_x f(x) = 0`.
pub fn capacity_dirichlet<T: Real>(g: &Graph, k: &[usize]) -> Result<CapacityResult<T>, PotentialError> {
    let ks = VertexSet::new(g, k)?;
    let ones = vec![T::one(); ks.members.len()];
    let sol = solve_kkt(g, &ks, &ones)?;
    let cap = dirichlet_pairing(g, &sol.f, &sol.f).map_err(|e| PotentialError::SolverFailure(e.to_string()))?;
    let nu = cap / T::from_count(g.two_m());
    Ok(CapacityResult { k_set: ks.members, nu, cap, f_k: sol.f, route: CapacityRoute::Dirichlet })
}

pub(crate) struct KktSolution<T> {
    pub f: Vec<T>,
    /// Multiplier of the zero-average constraint; equals `nu_phi`.
    pub nu: T,
}

/// Residual tolerance (relative) for the refined KKT solve.
pub const KKT_TOL: f64 = 1e-11;

/// Minimizes `E(f, f)/2` with `f = boundary` on `K` and `d^T f = 0`.
///
/// Unknowns are `(f, mu_K, nu)`; stationarity off `K` reads
/// `(L f)(x) + nu d_x = 0`. LU with partial pivoting plus iterative refinement.
pub(crate) fn solve_kkt<T: Real>(g: &Graph, ks: &VertexSet, boundary: &[T]) -> Result<KktSolution<T>, PotentialError> {
    let n = g.n();
    let kk = ks.members.len();
    let size = n + kk + 1;
    let mut a = DMatrix::<T>::zeros(size, size);
    a.view_mut((0, 0), (n, n)).copy_from(&g.laplacian::<T>());
    for (j, &x) in ks.members.iter().enumerate() {
        a[(x, n + j)] = T::one();
        a[(n + j, x)] = T::one();
    }
    for (x, &d) in g.deg().iter().enumerate() {
        a[(x, n + kk)] = T::from_count(d);
        a[(n + kk, x)] = T::from_count(d);
    }
    let mut rhs = DVector::<T>::zeros(size);
    for (j, &b) in boundary.iter().enumerate() {
        rhs[n + j] = b;
    }
    let lu = LU::new(a.clone());
    let mut x = lu.solve(&rhs).ok_or_else(|| PotentialError::SolverFailure("singular KKT matrix".into()))?;
    let scale = rhs.amax().max(T::one());
    let tol = T::lit(KKT_TOL).max(T::eps() * T::lit(100.0)) * scale;
    for _ in 0..5 {
        let r = &rhs - &a * &x;
        if r.amax() <= tol {
            break;
        }
        match lu.solve(&r) {
            Some(dx) => x += dx,
            None => break,
        }
    }
    if (&rhs - &a * &x).amax() > tol * T::lit(1e3) {
        return Err(PotentialError::SolverFailure("KKT residual above tolerance".into()));
    }
    Ok(KktSolution { f: x.rows(0, n).iter().copied().collect(), nu: x[n + kk] })
}

/// Energy-minimizing extension of boundary data on `K` under the
/// zero-average constraint.
#[derive(Debug, Clone)]
pub struct HarmonicExtension<T: Real> {
    pub k_set: Vec<usize>,
    /// Boundary values in `k_set` order.
    pub boundary: Vec<T>,
    pub f_phi: Vec<T>,
    pub nu_phi: T,
}

impl<T: Real> HarmonicExtension<T> {
    /// `max_{x notin K} |(L f)(x) + nu d_x|`: first-order optimality residual.
    pub fn stationarity_residual(&self, g: &Graph) -> T {
        let mut lf = vec![T::zero(); g.n()];
        g.laplacian_apply(&self.f_phi, &mut lf);
        (0..g.n())
            .filter(|x| self.k_set.binary_search(x).is_err())
            .map(|x| (lf[x] + self.nu_phi * T::from_count(g.deg()[x])).abs())
            .fold(T::zero(), |a, b| a.max(b))
    }
}

fn route_tolerance<T: Real>() -> T {
    T::lit(1e-9).max(T::eps() * T::lit(1e3))
}

/// Extends `values` (given on the vertices `k`, in the same order) to all of
/// `V`. Computes the KKT solution and the explicit Green/hitting formula
/// `f = -nu_phi sum_y d_y g_{K^c}(y, .) + E.[phi(X_{H_K})]`, and fails with
/// `RouteMismatch` if they disagree.
pub fn harmonic_extension<T: Real>(
    g: &Graph,
    k: &[usize],
    values: &[T],
) -> Result<HarmonicExtension<T>, PotentialError> {
    if k.len() != values.len() {
        return Err(PotentialError::BadK(format!("{} vertices but {} boundary values", k.len(), values.len())));
    }
    let ks = VertexSet::new(g, k)?;
    if ks.members.len() != k.len() {
        return Err(PotentialError::BadK("repeated vertex in K".into()));
    }
    let mut boundary = vec![T::zero(); k.len()];
    for (&x, &v) in k.iter().zip(values) {
        boundary[ks.members.binary_search(&x).expect("member")] = v;
    }

    let kkt = solve_kkt(g, &ks, &boundary)?;

    let hit = hitting_distribution::<T>(g, &ks.members)?;
    let expect = hit.expectation(&boundary);
    let (w, green_sum) = degree_potential::<T>(g, &ks)?;
    let weighted: T = g.deg().iter().zip(&expect).fold(T::zero(), |a, (&d, &e)| a + T::from_count(d) * e);
    let nu_phi = weighted / green_sum;
    let formula: Vec<T> = expect.iter().zip(&w).map(|(&e, &wx)| e - nu_phi * wx).collect();

    let scale = kkt.f.iter().fold(T::one(), |a, &v| a.max(v.abs()));
    let diff = kkt.f.iter().zip(&formula).fold(T::zero(), |a, (&p, &q)| a.max((p - q).abs()));
    let nu_diff = (kkt.nu - nu_phi).abs();
    let tol = route_tolerance::<T>() * scale;
    if diff > tol || nu_diff > tol * (T::one() + nu_phi.abs()) {
        return Err(PotentialError::RouteMismatch(diff.max(nu_diff).as_f64()));
    }
    Ok(HarmonicExtension { k_set: ks.members, boundary, f_phi: kkt.f, nu_phi })
}

/// `cap / (|K| + b_0(K))` with `b_0` the component count of the subgraph
/// induced on `K`; reported, not bounded.
pub fn capacity_ratio<T: Real>(g: &Graph, c: &CapacityResult<T>) -> f64 {
    let b0 = induced_components(g, &c.k_set);
    c.cap.as_f64() / (c.k_set.len() + b0) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_named, gen_random_regular, spectral_gap, Family};
    use proptest::prelude::*;

    fn k2() -> Graph {
        gen_named(&Family::Complete { n: 2 }).unwrap()
    }
    fn triangle() -> Graph {
        gen_named(&Family::Cycle { n: 3 }).unwrap()
    }

    #[test]
    fn killed_green_hand_values() {
        let kg = killed_green::<f64>(&k2(), &[0]).unwrap();
        assert!((kg.green[(1, 1)] - 1.0).abs() < 1e-14);
        assert_eq!(kg.green[(0, 0)], 0.0);
        let kg = killed_green::<f64>(&triangle(), &[0]).unwrap();
        let expect = [[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((kg.green[(i + 1, j + 1)] - expect[i][j]).abs() < 1e-14);
            }
        }
        for j in 0..3 {
            assert_eq!(kg.green[(0, j)], 0.0);
            assert_eq!(kg.green[(j, 0)], 0.0);
        }
    }

    #[test]
    fn bad_k() {
        let t = triangle();
        assert!(matches!(capacity_green::<f64>(&t, &[0, 1, 2]), Err(PotentialError::BadK(_))));
        assert!(matches!(capacity_dirichlet::<f64>(&t, &[]), Err(PotentialError::BadK(_))));
        assert!(matches!(killed_green::<f64>(&t, &[3]), Err(PotentialError::BadK(_))));
        assert!(matches!(hitting_distribution::<f64>(&t, &[2, 0, 1]), Err(PotentialError::BadK(_))));
        assert!(matches!(harmonic_extension(&t, &[0, 0], &[1.0, 2.0]), Err(PotentialError::BadK(_))));
    }

    #[test]
    fn hitting_hand_values() {
        let p = gen_named(&Family::Path { n: 3 }).unwrap();
        let h = hitting_distribution::<f64>(&p, &[0, 2]).unwrap();
        assert!((h.prob[(1, 0)] - 0.5).abs() < 1e-14);
        assert!((h.prob[(1, 1)] - 0.5).abs() < 1e-14);
        assert_eq!((h.prob[(0, 0)], h.prob[(0, 1)]), (1.0, 0.0));
        assert_eq!((h.prob[(2, 0)], h.prob[(2, 1)]), (0.0, 1.0));
        let h = hitting_distribution::<f64>(&triangle(), &[0]).unwrap();
        assert!((h.prob[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn capacity_hand_values() {
        for (g, cap, nu) in [(k2(), 4.0, 2.0), (triangle(), 4.5, 0.75)] {
            let a = capacity_green::<f64>(&g, &[0]).unwrap();
            let b = capacity_dirichlet::<f64>(&g, &[0]).unwrap();
            assert!((a.cap - cap).abs() < 1e-12 && (b.cap - cap).abs() < 1e-12);
            assert!((a.nu - nu).abs() < 1e-12 && (b.nu - nu).abs() < 1e-12);
        }
        let t = capacity_dirichlet::<f64>(&triangle(), &[0]).unwrap();
        for (got, want) in t.f_k.iter().zip([1.0, -0.5, -0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        let k4 = gen_named(&Family::Complete { n: 4 }).unwrap();
        let a = capacity_green::<f64>(&k4, &[0]).unwrap();
        let b = capacity_dirichlet::<f64>(&k4, &[0]).unwrap();
        assert!((a.cap - b.cap).abs() < 1e-10);
    }

    #[test]
    fn harmonic_extension_hand_values() {
        let e = harmonic_extension::<f64>(&k2(), &[0], &[1.0]).unwrap();
        assert!((e.f_phi[1] + 1.0).abs() < 1e-12);
        assert!((e.nu_phi - 2.0).abs() < 1e-12);
        let e = harmonic_extension::<f64>(&triangle(), &[0], &[1.0]).unwrap();
        assert!((e.f_phi[1] + 0.5).abs() < 1e-12 && (e.f_phi[2] + 0.5).abs() < 1e-12);

        let g = gen_random_regular(30, 3, 4).unwrap();
        let k = [3, 7, 8, 20];
        let e = harmonic_extension(&g, &k, &[1.0; 4]).unwrap();
        let c = capacity_dirichlet::<f64>(&g, &k).unwrap();
        for (a, b) in e.f_phi.iter().zip(&c.f_k) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((e.nu_phi - c.nu).abs() < 1e-10);
    }

    #[test]
    fn last_exit_matches_harmonic_solve() {
        let g = gen_random_regular(40, 4, 2).unwrap();
        let k = [0, 5, 9, 17, 33];
        let direct = hitting_distribution::<f64>(&g, &k).unwrap();
        let via = hitting_from_green(&g, &killed_green::<f64>(&g, &k).unwrap());
        assert!((direct.prob - via.prob).amax() < 1e-12);
    }

    #[test]
    fn f32_capacity() {
        let c = capacity_dirichlet::<f32>(&triangle(), &[0]).unwrap();
        assert!((c.cap - 4.5).abs() < 1e-4);
        let c = capacity_green::<f32>(&triangle(), &[0]).unwrap();
        assert!((c.cap - 4.5).abs() < 1e-4);
    }

    fn random_subset(n: usize, size: usize, seed: u64) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(&mut crate::seed::rng(seed));
        v.truncate(size);
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn capacity_invariants(seed in 0u64..10_000, half in 5usize..30, frac in 0.0f64..1.0) {
            let n = 2 * half;
            let g = gen_random_regular(n, 3, seed).unwrap();
            let size = 1 + ((n / 2 - 1) as f64 * frac) as usize;
            let k = random_subset(n, size, seed);
            let a = capacity_green::<f64>(&g, &k).unwrap();
            let b = capacity_dirichlet::<f64>(&g, &k).unwrap();
            prop_assert!((a.cap - b.cap).abs() <= 1e-9 * (1.0 + a.cap));
            // f_K = 1 on K, zero weighted mean, energy equals cap
            let mean: f64 = g.deg().iter().zip(&a.f_k).map(|(&d, f)| d as f64 * f).sum();
            prop_assert!(mean.abs() < 1e-10);
            for &x in &k {
                prop_assert!((a.f_k[x] - 1.0).abs() < 1e-12);
            }
            let energy = dirichlet_pairing(&g, &a.f_k, &a.f_k).unwrap();
            prop_assert!((energy - a.cap).abs() <= 1e-9 * a.cap);
            // linear lower bound from the spectral gap
            let gap = spectral_gap::<f64>(&g).unwrap().lambda_star;
            prop_assert!(a.cap >= gap * k.len() as f64 - 1e-12);
            // monotone under adding a vertex
            if k.len() + 1 < n {
                let extra = (0..n).find(|x| !k.contains(x)).unwrap();
                let mut k2 = k.clone();
                k2.push(extra);
                let bigger = capacity_green::<f64>(&g, &k2).unwrap();
                prop_assert!(a.nu <= bigger.nu + 1e-12);
            }
        }

        #[test]
        fn orthogonality_and_stationarity(seed in 0u64..10_000) {
            let n = 24;
            let g = gen_random_regular(n, 3, seed).unwrap();
            let k = random_subset(n, 6, seed + 1);
            let mut rng = crate::seed::rng(seed);
            let vals: Vec<f64> = (0..k.len()).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
            let e = harmonic_extension(&g, &k, &vals).unwrap();
            prop_assert!(e.stationarity_residual(&g) <= 1e-9);
            // basis of {w : w|K = 0, d^T w = 0}: e_x - (d_x / d_y) e_y for outside x, fixed outside y
            let outside: Vec<usize> = (0..n).filter(|x| !k.contains(x)).collect();
            let anchor = outside[0];
            for &x in &outside[1..] {
                let mut w = vec![0.0; n];
                w[x] = 1.0;
                w[anchor] = -(g.deg()[x] as f64) / g.deg()[anchor] as f64;
                prop_assert!(dirichlet_pairing(&g, &e.f_phi, &w).unwrap().abs() <= 1e-9);
            }
        }
    }
}
