//! Metric-graph level-set percolation: edge opening and cluster census.

use std::io::{self, Write};

use fixedbitset::FixedBitSet;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::gff::FieldSample;
use crate::graph::Graph;
use crate::scalar::Real;
use crate::seed;

/// Probability that the Brownian bridge between field values `a` and `b`
/// stays above `h`: `1 - exp(-2 (a-h)+ (b-h)+)`.
pub fn open_probability<T: Real>(a: T, b: T, h: T) -> T {
    let pa = (a - h).max(T::zero());
    let pb = (b - h).max(T::zero());
    // -expm1 keeps precision for small products
    -(-(T::lit(2.0) * pa * pb)).exp_m1()
}

/// The open edges `E^{>=h}` indexed by canonical edge position.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenEdgeSet<T> {
    pub h: T,
    pub open: FixedBitSet,
    pub seed: u64,
}

impl<T> OpenEdgeSet<T> {
    pub fn is_open(&self, edge: usize) -> bool {
        self.open.contains(edge)
    }

    pub fn count(&self) -> usize {
        self.open.count_ones(..)
    }
}

/// The per-edge uniforms `U_e`, in canonical edge order.
pub fn edge_uniforms(g: &Graph, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..g.num_edges()).map(|_| rng.random::<f64>()).collect()
}

/// Opens edge `e = {x, y}` iff `U_e < open_probability(phi_x, phi_y, h)`.
pub fn percolate<T: Real>(g: &Graph, f: &FieldSample<T>, h: T, seed: u64) -> OpenEdgeSet<T> {
    percolate_with_uniforms(g, f, h, &edge_uniforms(g, seed), seed)
}

/// [`percolate`] with caller-held uniforms, so several levels share one coupling.
pub fn percolate_with_uniforms<T: Real>(
    g: &Graph,
    f: &FieldSample<T>,
    h: T,
    uniforms: &[f64],
    seed: u64,
) -> OpenEdgeSet<T> {
    let mut open = FixedBitSet::with_capacity(g.num_edges());
    for (e, &(x, y)) in g.edges().iter().enumerate() {
        let p = open_probability(f.phi[x], f.phi[y], h);
        if T::lit(uniforms[e]) < p {
            open.insert(e);
        }
    }
    OpenEdgeSet { h, open, seed }
}

/// Disjoint-set forest with union by size and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    pub fn size_of(&mut self, x: usize) -> usize {
        let r = self.find(x);
        self.size[r]
    }
}

/// Connected-component census of `(V, E^{>=h})`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterStats {
    /// Cluster sizes, descending.
    pub sizes: Vec<usize>,
    pub cmax: usize,
    /// Smallest vertex index in a largest cluster (ties go to the smallest index).
    pub cmax_root: usize,
    pub second_cmax: Option<usize>,
    pub num_clusters: usize,
    /// Dense cluster id per vertex, numbered by first appearance.
    #[serde(skip)]
    pub labels: Vec<usize>,
}

pub fn clusters<T>(g: &Graph, o: &OpenEdgeSet<T>) -> ClusterStats {
    let n = g.n();
    let mut uf = UnionFind::new(n);
    for e in o.open.ones() {
        let (x, y) = g.edges()[e];
        uf.union(x, y);
    }
    let mut root_label = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut sizes_by_label = Vec::new();
    let mut min_vertex = Vec::new();
    for x in 0..n {
        let r = uf.find(x);
        if root_label[r] == usize::MAX {
            root_label[r] = sizes_by_label.len();
            sizes_by_label.push(0);
            min_vertex.push(x);
        }
        let l = root_label[r];
        sizes_by_label[l] += 1;
        labels.push(l);
    }
    // labels appear in order of their smallest vertex, so the first maximum wins the tie-break
    let (best, &cmax) = sizes_by_label
        .iter()
        .enumerate()
        .fold((0, &0), |acc, (i, s)| if *s > *acc.1 { (i, s) } else { acc });
    let mut sizes = sizes_by_label.clone();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    ClusterStats {
        cmax,
        cmax_root: min_vertex[best],
        second_cmax: sizes.get(1).copied(),
        num_clusters: sizes.len(),
        sizes,
        labels,
    }
}

impl ClusterStats {
    /// CSV dump with header `vertex,cluster_id`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "vertex,cluster_id")?;
        for (x, l) in self.labels.iter().enumerate() {
            writeln!(w, "{x},{l}")?;
        }
        Ok(())
    }
}

/// Simulates a standard Brownian bridge on `[0, 1]` from `a` to `b` on a grid
/// of `steps` increments and reports whether its grid minimum is `>= h`.
///
/// Grid monitoring misses excursions between grid points, so the frequency of
/// `true` is biased upward relative to [`open_probability`] by roughly
/// `O(steps^{-1/2})`.
pub fn bridge_min_oracle(a: f64, b: f64, h: f64, steps: usize, seed: u64) -> bool {
    assert!(steps >= 2, "bridge needs at least 2 steps");
    if a < h || b < h {
        return false;
    }
    let mut rng = seed::rng(seed);
    let dt = 1.0 / steps as f64;
    let sd = dt.sqrt();
    let mut walk = Vec::with_capacity(steps);
    let mut w = 0.0;
    for _ in 0..steps {
        w += sd * rng.sample::<f64, _>(StandardNormal);
        walk.push(w);
    }
    let end = w;
    walk.iter().enumerate().all(|(k, &wk)| {
        let t = (k + 1) as f64 * dt;
        a + wk - t * end + t * (b - a) >= h
    })
}

/// Fraction of `runs` bridges staying above `h`; run `i` uses seed `mix(seed, i)`.
pub fn bridge_survival_frequency(a: f64, b: f64, h: f64, steps: usize, runs: usize, seed: u64) -> f64 {
    use rayon::prelude::*;
    let hits: usize = (0..runs)
        .into_par_iter()
        .filter(|&i| bridge_min_oracle(a, b, h, steps, seed::mix(&[seed, i as u64])))
        .count();
    hits as f64 / runs as f64
}
