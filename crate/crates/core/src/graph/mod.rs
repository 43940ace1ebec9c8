//! Simple connected graphs: construction, named families, random regular
//! graphs, Laplacian access and the spectral gap.

mod generate;
mod spectral;

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scalar::Real;

pub use generate::{gen_named, gen_random_regular, Family, RRG_MAX_RETRIES};
pub use spectral::{spectral_gap, spectral_gap_with, GapMethod, SpectralReport, DENSE_THRESHOLD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("graph needs at least 2 vertices, got {0}")]
    TooSmall(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("random regular generation failed after {0} re-pairings")]
    GenerationFailed(usize),
    #[error("bad parameters for {family}: {msg}")]
    BadParams { family: &'static str, msg: String },
    #[error("eigensolver failed: {0}")]
    SolverFailure(String),
}

/// Immutable simple connected graph with canonical edge order.
///
/// Edges are stored as `(min, max)` pairs sorted lexicographically; the
/// position of an edge in [`Graph::edges`] is its canonical index.
#[derive(Debug)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    deg: Vec<usize>,
    two_m: usize,
    d_max: usize,
    // CSR adjacency, neighbours sorted ascending
    offsets: Vec<usize>,
    nbrs: Vec<usize>,
    gap: OnceLock<f64>,
}

impl Clone for Graph {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            edges: self.edges.clone(),
            deg: self.deg.clone(),
            two_m: self.two_m,
            d_max: self.d_max,
            offsets: self.offsets.clone(),
            nbrs: self.nbrs.clone(),
            gap: self.gap.get().map(|&g| OnceLock::from(g)).unwrap_or_default(),
        }
    }
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.edges == other.edges
    }
}

impl Graph {
    /// Builds a graph on `n` vertices from an arbitrary list of vertex pairs,
    /// validating simplicity and connectivity.
    pub fn from_edges(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooSmall(n));
        }
        let mut edges = Vec::new();
        for (u, v) in pairs {
            if u >= n || v >= n {
                return Err(GraphError::Precondition(format!("edge ({u}, {v}) out of range for n = {n}")));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            edges.push((u.min(v), u.max(v)));
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }
        let mut deg = vec![0usize; n];
        for &(u, v) in &edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for x in 0..n {
            offsets[x + 1] = offsets[x] + deg[x];
        }
        let mut fill = offsets.clone();
        let mut nbrs = vec![0usize; offsets[n]];
        for &(u, v) in &edges {
            nbrs[fill[u]] = v;
            fill[u] += 1;
            nbrs[fill[v]] = u;
            fill[v] += 1;
        }
        for x in 0..n {
            nbrs[offsets[x]..offsets[x + 1]].sort_unstable();
        }
        let g = Self {
            n,
            two_m: 2 * edges.len(),
            d_max: deg.iter().copied().max().unwrap_or(0),
            edges,
            deg,
            offsets,
            nbrs,
            gap: OnceLock::new(),
        };
        if !g.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(g)
    }

    /// Parses an edge-list document: one `u v` pair per line, 0-based,
    /// `#` comments and blank lines ignored. `n` is the largest index plus one.
    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut pairs = Vec::new();
        let mut n = 0usize;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: &str| GraphError::Parse { line: i + 1, msg: msg.to_string() };
            let mut it = line.split_whitespace();
            let u: usize = it
                .next()
                .ok_or_else(|| parse_err("missing vertex"))?
                .parse()
                .map_err(|_| parse_err("vertex is not a non-negative integer"))?;
            let v: usize = it
                .next()
                .ok_or_else(|| parse_err("expected two vertices"))?
                .parse()
                .map_err(|_| parse_err("vertex is not a non-negative integer"))?;
            if it.next().is_some() {
                return Err(parse_err("trailing tokens"));
            }
            n = n.max(u + 1).max(v + 1);
            pairs.push((u, v));
        }
        Self::from_edges(n, pairs)
    }

    /// Serializes to the edge-list format accepted by [`Graph::from_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# n={} m={}\n", self.n, self.edges.len());
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn deg(&self) -> &[usize] {
        &self.deg
    }

    /// Total degree `2|E|`.
    pub fn two_m(&self) -> usize {
        self.two_m
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn d_min(&self) -> usize {
        self.deg.iter().copied().min().unwrap_or(0)
    }

    pub fn neighbors(&self, x: usize) -> &[usize] {
        &self.nbrs[self.offsets[x]..self.offsets[x + 1]]
    }

    pub fn degree_vector<T: Real>(&self) -> DVector<T> {
        DVector::from_iterator(self.n, self.deg.iter().map(|&d| T::from_count(d)))
    }

    /// Dense combinatorial Laplacian `D - A` with unit conductances.
    pub fn laplacian<T: Real>(&self) -> DMatrix<T> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for (x, &d) in self.deg.iter().enumerate() {
            l[(x, x)] = T::from_count(d);
        }
        for &(u, v) in &self.edges {
            l[(u, v)] = -T::one();
            l[(v, u)] = -T::one();
        }
        l
    }

    /// `out = L x` using the sparse adjacency.
    pub fn laplacian_apply<T: Real>(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.n);
        for v in 0..self.n {
            let mut acc = T::from_count(self.deg[v]) * x[v];
            for &w in self.neighbors(v) {
                acc -= x[w];
            }
            out[v] = acc;
        }
    }

    /// Spectral gap, computed once with the default solver and cached.
    pub fn lambda_star(&self) -> Result<f64, GraphError> {
        if let Some(&g) = self.gap.get() {
            return Ok(g);
        }
        let report = spectral_gap::<f64>(self)?;
        Ok(*self.gap.get_or_init(|| report.lambda_star))
    }

    fn is_connected(&self) -> bool {
        self.bfs_order(0).len() == self.n
    }

    fn bfs_order(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        let mut order = Vec::with_capacity(self.n);
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(x) = queue.pop_front() {
            order.push(x);
            for &y in self.neighbors(x) {
                if !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        order
    }

    /// Same graph with vertex `x` renamed to `perm[x]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self, GraphError> {
        if perm.len() != self.n {
            return Err(GraphError::Precondition("permutation length differs from n".into()));
        }
        Self::from_edges(self.n, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])))
    }
}

/// Number of edges with exactly one endpoint in `s`.
pub fn edge_boundary(g: &Graph, s: &[usize]) -> usize {
    let mut inside = vec![false; g.n()];
    for &x in s {
        inside[x] = true;
    }
    g.edges().iter().filter(|&&(u, v)| inside[u] != inside[v]).count()
}

/// Connected components of the subgraph of `g` induced on `s`.
pub fn induced_components(g: &Graph, s: &[usize]) -> usize {
    let mut inside = vec![false; g.n()];
    for &x in s {
        inside[x] = true;
    }
    let mut seen = vec![false; g.n()];
    let mut count = 0;
    for &x in s {
        if seen[x] {
            continue;
        }
        count += 1;
        seen[x] = true;
        let mut stack = vec![x];
        while let Some(y) = stack.pop() {
            for &z in g.neighbors(y) {
                if inside[z] && !seen[z] {
                    seen[z] = true;
                    stack.push(z);
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge() {
        let g = Graph::from_edge_list("0 1").unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.deg(), &[1, 1]);
        assert_eq!(g.two_m(), 2);
    }

    #[test]
    fn triangle_canonicalized() {
        let g = Graph::from_edge_list("# triangle\n0 1\n\n1 2\n2 0\n").unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(g.deg(), &[2, 2, 2]);
        assert_eq!(g.two_m(), 6);
        assert_eq!(g.d_max(), 2);
    }

    #[test]
    fn rejections() {
        assert_eq!(Graph::from_edge_list("0 1\n0 1"), Err(GraphError::DuplicateEdge(0, 1)));
        assert_eq!(Graph::from_edge_list("0 1\n1 0"), Err(GraphError::DuplicateEdge(0, 1)));
        assert_eq!(Graph::from_edge_list("0 0\n0 1"), Err(GraphError::SelfLoop(0)));
        assert_eq!(Graph::from_edge_list("0 1\n2 3"), Err(GraphError::Disconnected));
        assert_eq!(Graph::from_edge_list("0 2"), Err(GraphError::Disconnected));
        assert_eq!(Graph::from_edge_list(""), Err(GraphError::TooSmall(0)));
        assert!(matches!(Graph::from_edge_list("0 x"), Err(GraphError::Parse { line: 1, .. })));
        assert!(matches!(Graph::from_edge_list("0 1\n1"), Err(GraphError::Parse { line: 2, .. })));
        assert!(matches!(Graph::from_edge_list("0 1 2"), Err(GraphError::Parse { .. })));
        assert!(matches!(Graph::from_edge_list("-1 2"), Err(GraphError::Parse { .. })));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = gen_random_regular(50, 3, 11).unwrap();
        let h = Graph::from_edge_list(&g.to_edge_list()).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn boundary_cases() {
        let k4 = gen_named(&Family::Complete { n: 4 }).unwrap();
        assert_eq!(edge_boundary(&k4, &[0]), 3);
        let c4 = gen_named(&Family::Cycle { n: 4 }).unwrap();
        assert_eq!(edge_boundary(&c4, &[0, 1]), 2);
        assert_eq!(edge_boundary(&c4, &[0, 1, 2, 3]), 0);
        assert_eq!(edge_boundary(&c4, &[]), 0);
    }

    #[test]
    fn induced_component_count() {
        let c6 = gen_named(&Family::Cycle { n: 6 }).unwrap();
        assert_eq!(induced_components(&c6, &[0, 1, 3]), 2);
        assert_eq!(induced_components(&c6, &[0, 5, 1]), 1);
        assert_eq!(induced_components(&c6, &[]), 0);
    }

    #[test]
    fn laplacian_matches_sparse_apply() {
        let g = gen_random_regular(30, 4, 5).unwrap();
        let l = g.laplacian::<f64>();
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 30];
        g.laplacian_apply(&x, &mut y);
        let dense = &l * DVector::from_column_slice(&x);
        for i in 0..30 {
            assert!((dense[i] - y[i]).abs() < 1e-12);
        }
        // rows sum to zero
        for i in 0..30 {
            assert!(l.row(i).sum().abs() < 1e-12);
        }
    }
}
