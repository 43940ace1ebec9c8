//! The set-indexed martingale `M_K = E(phi, f_K)` and the discrete
//! exploration process that grows `K` through open clusters.
//!
//! `M_K` is linear in the field, `M_K = a^T phi` with
//! `a[x] = nu_K sum_y d_y P_y[X_{H_K} = x]` for `x` in `K`. The coefficients
//! are nonnegative with total mass `2|E| nu_K`, split into a bulk part
//! `nu_K d_x` and a boundary part carried by vertices of `K` with a
//! neighbour outside.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gff::{FieldSample, Sampler};
use crate::graph::Graph;
use crate::percolation::{percolate, OpenEdgeSet};
use crate::potential::{degree_potential, hitting_distribution, PotentialError, VertexSet};
use crate::scalar::{dot, Real};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MartingaleError {
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("start vertex {0} out of range")]
    BadStart(usize),
}

#[derive(Debug, Clone)]
pub struct MartingaleCoefficients<T> {
    pub k_set: Vec<usize>,
    pub a: Vec<T>,
    pub a_blk: Vec<T>,
    pub a_bdr: Vec<T>,
    pub nu: T,
    pub two_m: T,
}

impl<T: Real> MartingaleCoefficients<T> {
    /// `2|E| nu_K`, the variance of `M_K`.
    pub fn capacity(&self) -> T {
        self.two_m * self.nu
    }

    pub fn mass(&self) -> T {
        self.a.iter().fold(T::zero(), |s, &x| s + x)
    }

    fn from_parts(g: &Graph, ks: &VertexSet, nu: T, a: Vec<T>) -> Self {
        let mut a_blk = vec![T::zero(); g.n()];
        for &x in &ks.members {
            a_blk[x] = nu * T::from_count(g.deg()[x]);
        }
        let a_bdr = a.iter().zip(&a_blk).map(|(&t, &b)| t - b).collect();
        Self { k_set: ks.members.clone(), a, a_blk, a_bdr, nu, two_m: T::from_count(g.two_m()) }
    }
}

/// Coefficients from the hitting distribution of `K`.
pub fn martingale_coefficients<T: Real>(g: &Graph, k: &[usize]) -> Result<MartingaleCoefficients<T>, MartingaleError> {
    let ks = VertexSet::new(g, k)?;
    let (_, green_sum) = degree_potential::<T>(g, &ks)?;
    let nu = T::from_count(g.two_m()) / green_sum;
    let hit = hitting_distribution::<T>(g, &ks.members)?;
    let mut a = vec![T::zero(); g.n()];
    for (j, &x) in ks.members.iter().enumerate() {
        let mut s = T::zero();
        for (y, &d) in g.deg().iter().enumerate() {
            s += T::from_count(d) * hit.prob[(y, j)];
        }
        a[x] = nu * s;
    }
    Ok(MartingaleCoefficients::from_parts(g, &ks, nu, a))
}

/// Same coefficients from one Dirichlet solve: with `w = L_{K^c}^{-1} d`,
/// `a[x] = nu (d_x + sum_{z ~ x, z notin K} w(z))`.
pub fn martingale_coefficients_fast<T: Real>(
    g: &Graph,
    k: &[usize],
) -> Result<MartingaleCoefficients<T>, MartingaleError> {
    let ks = VertexSet::new(g, k)?;
    Ok(coefficients_for(g, &ks)?)
}

fn coefficients_for<T: Real>(g: &Graph, ks: &VertexSet) -> Result<MartingaleCoefficients<T>, PotentialError> {
    let (w, green_sum) = degree_potential::<T>(g, ks)?;
    let nu = T::from_count(g.two_m()) / green_sum;
    let mut a = vec![T::zero(); g.n()];
    for &x in &ks.members {
        let mut s = T::from_count(g.deg()[x]);
        for &z in g.neighbors(x) {
            if !ks.inside[z] {
                s += w[z];
            }
        }
        a[x] = nu * s;
    }
    Ok(MartingaleCoefficients::from_parts(g, ks, nu, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleValue<T> {
    pub m: T,
    pub m_blk: T,
    pub m_bdr: T,
}

/// `(M_K, M_K^blk, M_K^bdr)`; `m` is defined as `m_blk + m_bdr`.
pub fn evaluate_martingale<T: Real>(
    c: &MartingaleCoefficients<T>,
    f: &FieldSample<T>,
) -> Result<MartingaleValue<T>, MartingaleError> {
    if f.phi.len() != c.a.len() {
        return Err(MartingaleError::DimensionMismatch { expected: c.a.len(), got: f.phi.len() });
    }
    let m_blk = dot(&c.a_blk, &f.phi);
    let m_bdr = dot(&c.a_bdr, &f.phi);
    Ok(MartingaleValue { m: m_blk + m_bdr, m_blk, m_bdr })
}

/// Checks `M_K >= 2 h |E| nu_K` whenever `K` lies in the level set: every
/// vertex of `K` has `phi >= h` and every edge of `g` inside `K` is open.
/// Returns `true` when that premise does not hold.
pub fn level_bound_check<T: Real>(
    g: &Graph,
    c: &MartingaleCoefficients<T>,
    f: &FieldSample<T>,
    o: &OpenEdgeSet<T>,
    h: T,
) -> bool {
    let mut inside = vec![false; g.n()];
    for &x in &c.k_set {
        if f.phi[x] < h {
            return true;
        }
        inside[x] = true;
    }
    let premise = g
        .edges()
        .iter()
        .enumerate()
        .all(|(e, &(x, y))| !(inside[x] && inside[y]) || o.is_open(e));
    if !premise {
        return true;
    }
    let m = dot(&c.a, &f.phi);
    let bound = c.capacity() * h;
    let slack = T::eps() * T::lit(64.0) * (c.mass() * f.phi.iter().fold(T::zero(), |a, &p| a.max(p.abs())) + T::one());
    m >= bound - slack
}

/// One step of an exploration.
#[derive(Debug, Clone, Serialize)]
pub struct TraceStep<T> {
    pub step: usize,
    pub added_vertex: usize,
    /// The vertex was reached through an open edge (false for a jump).
    pub cluster_step: bool,
    /// Every vertex so far lies in the open cluster of the start vertex.
    pub in_cluster: bool,
    pub nu: T,
    /// Capacity clock `2|E| (nu_{K_i} - nu_{K_0})`.
    pub q: T,
    pub m: T,
    pub m_blk: T,
    pub m_bdr: T,
}

/// Nested sets `K_0 = {start} ⊂ K_1 ⊂ ...`, where `K_i` is the first `i + 1`
/// entries of `order`.
#[derive(Debug, Clone)]
pub struct ExplorationTrace<T> {
    pub start: usize,
    pub level: T,
    pub held_out: usize,
    pub order: Vec<usize>,
    pub steps: Vec<TraceStep<T>>,
    pub seed: u64,
}

impl<T: Real> ExplorationTrace<T> {
    pub fn k_set(&self, i: usize) -> &[usize] {
        &self.order[..=i]
    }

    /// CSV dump with header `step,added_vertex,cluster_step,q,m,m_blk,m_bdr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,added_vertex,cluster_step,q,m,m_blk,m_bdr")?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.step,
                s.added_vertex,
                u8::from(s.cluster_step),
                s.q.as_f64(),
                s.m.as_f64(),
                s.m_blk.as_f64(),
                s.m_bdr.as_f64()
            )?;
        }
        Ok(())
    }
}

/// Explores from `start`: add the smallest vertex joined to `K` by an open
/// edge if there is one, otherwise the smallest unexplored neighbour of `K`
/// in `g` (any unexplored vertex if none). The largest-index vertex other
/// than `start` is never added, so the trace ends at `|K| = n - 1`.
pub fn explore<T: Real>(
    g: &Graph,
    f: &FieldSample<T>,
    o: &OpenEdgeSet<T>,
    start: usize,
) -> Result<ExplorationTrace<T>, MartingaleError> {
    let n = g.n();
    if start >= n {
        return Err(MartingaleError::BadStart(start));
    }
    if f.phi.len() != n {
        return Err(MartingaleError::DimensionMismatch { expected: n, got: f.phi.len() });
    }
    let held_out = if start == n - 1 { n - 2 } else { n - 1 };
    let mut open_adj = vec![Vec::new(); n];
    for e in o.open.ones() {
        let (x, y) = g.edges()[e];
        open_adj[x].push(y);
        open_adj[y].push(x);
    }

    let mut in_k = vec![false; n];
    let mut order = Vec::with_capacity(n - 1);
    let mut open_frontier = BTreeSet::new();
    let mut graph_frontier = BTreeSet::new();
    let mut steps = Vec::with_capacity(n - 1);
    let mut in_cluster = true;
    let mut nu0 = T::zero();

    let mut next = Some((start, true));
    while let Some((x, via_open)) = next {
        in_k[x] = true;
        order.push(x);
        open_frontier.remove(&x);
        graph_frontier.remove(&x);
        for &y in &open_adj[x] {
            if !in_k[y] && y != held_out {
                open_frontier.insert(y);
            }
        }
        for &y in g.neighbors(x) {
            if !in_k[y] && y != held_out {
                graph_frontier.insert(y);
            }
        }
        in_cluster &= via_open;

        let ks = VertexSet::new(g, &order)?;
        let c = coefficients_for::<T>(g, &ks)?;
        let val = evaluate_martingale(&c, f)?;
        if steps.is_empty() {
            nu0 = c.nu;
        }
        steps.push(TraceStep {
            step: steps.len(),
            added_vertex: x,
            cluster_step: via_open,
            in_cluster,
            nu: c.nu,
            q: c.two_m * (c.nu - nu0),
            m: val.m,
            m_blk: val.m_blk,
            m_bdr: val.m_bdr,
        });

        next = if order.len() >= n - 1 {
            None
        } else if let Some(&y) = open_frontier.first() {
            Some((y, true))
        } else if let Some(&y) = graph_frontier.first() {
            Some((y, false))
        } else {
            (0..n).find(|&y| !in_k[y] && y != held_out).map(|y| (y, false))
        };
    }
    Ok(ExplorationTrace { start, level: o.h, held_out, order, steps, seed: o.seed })
}

/// The trace in capacity time: `(q_i, m_i)`.
pub fn time_change<T: Real>(t: &ExplorationTrace<T>) -> Vec<(T, T)> {
    t.steps.iter().map(|s| (s.q, s.m)).collect()
}

/// Per-step moments over many independent explorations.
#[derive(Debug, Clone, Serialize)]
pub struct ClockDiagnostics {
    pub traces: usize,
    pub mean_q: Vec<f64>,
    pub mean_increment: Vec<f64>,
    /// Sample variance of `m_i - m_0`.
    pub var_increment: Vec<f64>,
    /// Least-squares slope of `var_increment` on `mean_q` (with intercept).
    pub slope: f64,
    pub intercept: f64,
}

/// Runs `traces` explorations from `start` at level `h`, trace `t` using the
/// field seed `mix(master_seed, t)`, and regresses the increment variance on
/// the mean capacity clock.
pub fn clock_diagnostics(
    g: &Graph,
    sampler: &Sampler<f64>,
    h: f64,
    start: usize,
    traces: usize,
    master_seed: u64,
) -> Result<ClockDiagnostics, MartingaleError> {
    let runs: Vec<ExplorationTrace<f64>> = (0..traces)
        .into_par_iter()
        .map(|t| {
            let field_seed = seed::mix(&[master_seed, t as u64]);
            let f = sampler.sample(field_seed);
            let o = percolate(g, &f, h, seed::uniform_seed(field_seed));
            explore(g, &f, &o, start)
        })
        .collect::<Result<_, _>>()?;
    let len = runs.iter().map(|r| r.steps.len()).min().unwrap_or(0);
    let count = runs.len() as f64;
    let mut mean_q = vec![0.0; len];
    let mut mean_inc = vec![0.0; len];
    let mut var_inc = vec![0.0; len];
    for i in 0..len {
        let incs: Vec<f64> = runs.iter().map(|r| r.steps[i].m - r.steps[0].m).collect();
        mean_q[i] = runs.iter().map(|r| r.steps[i].q).sum::<f64>() / count;
        let mu = incs.iter().sum::<f64>() / count;
        mean_inc[i] = mu;
        var_inc[i] = incs.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (count - 1.0).max(1.0);
    }
    let (slope, intercept) = least_squares(&mean_q, &var_inc);
    Ok(ClockDiagnostics { traces, mean_q, mean_increment: mean_inc, var_increment: var_inc, slope, intercept })
}

pub(crate) fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::{covariance_matrix, make_sampler, SamplerRoute};
    use crate::graph::{gen_named, gen_random_regular, Family};
    use crate::potential::capacity_green;
    use fixedbitset::FixedBitSet;
    use nalgebra::DVector;

    fn k2() -> Graph {
        gen_named(&Family::Complete { n: 2 }).unwrap()
    }

    fn field(phi: Vec<f64>) -> FieldSample<f64> {
        FieldSample { phi, seed: 0, route: SamplerRoute::Eigen }
    }

    fn quad(sigma: &nalgebra::DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
        (DVector::from_column_slice(a).transpose() * sigma * DVector::from_column_slice(b))[(0, 0)]
    }

    #[test]
    fn k2_coefficients() {
        let g = k2();
        let c = martingale_coefficients::<f64>(&g, &[0]).unwrap();
        assert!((c.a[0] - 4.0).abs() < 1e-12);
        assert_eq!(c.a[1], 0.0);
        let sigma = covariance_matrix::<f64>(&g).unwrap().sigma;
        assert!((quad(&sigma, &c.a, &c.a) - 4.0).abs() < 1e-12);
        let v = evaluate_martingale(&c, &field(vec![0.7, -0.7])).unwrap();
        assert!((v.m - 2.8).abs() < 1e-12);
        let zero = evaluate_martingale(&c, &field(vec![0.0, 0.0])).unwrap();
        assert_eq!((zero.m, zero.m_blk, zero.m_bdr), (0.0, 0.0, 0.0));
        assert!(matches!(evaluate_martingale(&c, &field(vec![0.0; 3])), Err(MartingaleError::DimensionMismatch { .. })));
    }

    #[test]
    fn triangle_bulk_part() {
        let g = gen_named(&Family::Cycle { n: 3 }).unwrap();
        let c = martingale_coefficients::<f64>(&g, &[0]).unwrap();
        let v = evaluate_martingale(&c, &field(vec![1.0, -0.25, -0.75])).unwrap();
        assert!((v.m_blk - 0.75 * 2.0 * 1.0).abs() < 1e-12);
        assert_eq!(v.m, v.m_blk + v.m_bdr);
    }

    #[test]
    fn fast_route_matches_hitting_route() {
        let g = gen_random_regular(50, 3, 21).unwrap();
        let k = [1, 4, 9, 10, 11, 30, 42];
        let slow = martingale_coefficients::<f64>(&g, &k).unwrap();
        let fast = martingale_coefficients_fast::<f64>(&g, &k).unwrap();
        for (a, b) in slow.a.iter().zip(&fast.a) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((slow.nu - fast.nu).abs() < 1e-12);
    }

    #[test]
    fn coefficient_structure() {
        let g = gen_random_regular(40, 3, 5).unwrap();
        let k = [0, 1, 2, 3, 17, 25];
        let c = martingale_coefficients::<f64>(&g, &k).unwrap();
        let cap = capacity_green::<f64>(&g, &k).unwrap().cap;
        assert!((c.mass() - cap).abs() < 1e-10);
        assert!(c.a.iter().all(|&x| x >= -1e-14));
        for x in 0..g.n() {
            if !k.contains(&x) {
                assert_eq!(c.a[x], 0.0);
            }
            let boundary = k.contains(&x) && g.neighbors(x).iter().any(|y| !k.contains(y));
            if !boundary {
                assert!(c.a_bdr[x].abs() < 1e-12, "vertex {x}");
            }
        }
    }

    #[test]
    fn level_bound_k2() {
        let g = k2();
        let c = martingale_coefficients::<f64>(&g, &[0]).unwrap();
        let o = OpenEdgeSet { h: 0.2, open: FixedBitSet::with_capacity(1), seed: 0 };
        // K = {0} has no internal edges; premise is phi(0) >= h
        assert!(level_bound_check(&g, &c, &field(vec![0.5, -0.5]), &o, 0.2));
        let v = evaluate_martingale(&c, &field(vec![0.5, -0.5])).unwrap();
        assert!(v.m >= 4.0 * 0.2);
    }

    #[test]
    fn level_bound_in_simulation() {
        let g = gen_random_regular(30, 3, 2).unwrap();
        let s = make_sampler::<f64>(&g, SamplerRoute::Eigen).unwrap();
        for t in 0..50u64 {
            let f = s.sample(t);
            let o = percolate(&g, &f, 0.0, t + 1000);
            let tr = explore(&g, &f, &o, 0).unwrap();
            for i in 0..tr.steps.len() {
                let c = martingale_coefficients_fast::<f64>(&g, tr.k_set(i)).unwrap();
                assert!(level_bound_check(&g, &c, &f, &o, 0.0));
                assert!(level_bound_check(&g, &c, &f, &o, -0.3));
            }
        }
    }

    #[test]
    fn explore_all_open_and_none_open() {
        let g = gen_random_regular(12, 3, 3).unwrap();
        let f = field(vec![0.0; 12]);
        let mut all = FixedBitSet::with_capacity(g.num_edges());
        all.insert_range(..);
        let o = OpenEdgeSet { h: -1.0, open: all, seed: 0 };
        let tr = explore(&g, &f, &o, 0).unwrap();
        assert_eq!(tr.order.len(), 11);
        assert_eq!(tr.held_out, 11);
        assert!(!tr.order.contains(&11));
        // removing the held-out vertex may disconnect the rest; otherwise every step is a cluster step
        assert_eq!(tr.steps[0].q, 0.0);
        assert!(tr.steps.windows(2).all(|w| w[1].q >= w[0].q));

        let none = OpenEdgeSet { h: 1.0, open: FixedBitSet::with_capacity(g.num_edges()), seed: 0 };
        let tr = explore(&g, &f, &none, 4).unwrap();
        assert!(tr.steps[1..].iter().all(|s| !s.cluster_step && !s.in_cluster));
        // every jump takes the smallest unexplored G-neighbour of K
        for i in 1..tr.order.len() {
            let k = &tr.order[..i];
            let expect = (0..12)
                .filter(|y| !k.contains(y) && *y != 11)
                .find(|&y| k.iter().any(|&x| g.neighbors(x).contains(&y)))
                .unwrap();
            assert_eq!(tr.order[i], expect);
        }
    }

    #[test]
    fn explore_cycle_all_open_is_cluster_walk() {
        let g = gen_named(&Family::Cycle { n: 8 }).unwrap();
        let mut all = FixedBitSet::with_capacity(8);
        all.insert_range(..);
        let o = OpenEdgeSet { h: -1.0, open: all, seed: 0 };
        let tr = explore(&g, &field(vec![0.0; 8]), &o, 0).unwrap();
        assert_eq!(tr.order, vec![0, 1, 2, 3, 4, 5, 6]);
        assert!(tr.steps.iter().all(|s| s.in_cluster));
        let tc = time_change(&tr);
        assert!(tc.windows(2).all(|w| w[1].0 > w[0].0));
    }

    #[test]
    fn single_step_trace() {
        let g = k2();
        let o = OpenEdgeSet { h: 0.0, open: FixedBitSet::with_capacity(1), seed: 0 };
        let tr = explore(&g, &field(vec![0.3, -0.3]), &o, 1).unwrap();
        assert_eq!(tr.held_out, 0);
        assert_eq!(time_change(&tr), vec![(0.0, tr.steps[0].m)]);
        assert!(matches!(explore(&g, &field(vec![0.3, -0.3]), &o, 2), Err(MartingaleError::BadStart(2))));
    }

    #[test]
    fn nested_prefix_orthogonality() {
        let g = gen_random_regular(40, 3, 7).unwrap();
        let sigma = covariance_matrix::<f64>(&g).unwrap().sigma;
        let order: Vec<usize> = (0..39).collect();
        let coeffs: Vec<_> = (1..39).map(|i| martingale_coefficients_fast::<f64>(&g, &order[..i]).unwrap()).collect();
        for i in [0usize, 3, 10] {
            for j in [i + 1, i + 7, 37] {
                let diff: Vec<f64> = coeffs[j].a.iter().zip(&coeffs[i].a).map(|(x, y)| x - y).collect();
                let cov = quad(&sigma, &coeffs[i].a, &diff);
                let scale = (coeffs[i].capacity() * coeffs[j].capacity()).sqrt();
                assert!(cov.abs() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn trace_csv_header() {
        let g = gen_named(&Family::Cycle { n: 4 }).unwrap();
        let o = OpenEdgeSet { h: 0.0, open: FixedBitSet::with_capacity(4), seed: 0 };
        let tr = explore(&g, &field(vec![0.1, 0.2, -0.1, -0.2]), &o, 0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,added_vertex,cluster_step,q,m,m_blk,m_bdr\n0,0,1,0,"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn least_squares_exact() {
        let (s, b) = least_squares(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }
}
