use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError};
use crate::seed;

/// Re-pairings attempted by the configuration model before giving up.
pub const RRG_MAX_RETRIES: usize = 1000;

/// A named graph family with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Cycle { n: usize },
    Path { n: usize },
    Complete { n: usize },
    /// Discrete torus `(Z/side)^dim`.
    Torus { side: usize, dim: usize },
    /// Random `d`-regular graph from the configuration model.
    Rrg { n: usize, d: usize, seed: u64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Cycle { .. } => "cycle",
            Family::Path { .. } => "path",
            Family::Complete { .. } => "complete",
            Family::Torus { .. } => "torus",
            Family::Rrg { .. } => "rrg",
        }
    }

    pub fn vertex_count(&self) -> usize {
        match *self {
            Family::Cycle { n } | Family::Path { n } | Family::Complete { n } | Family::Rrg { n, .. } => n,
            Family::Torus { side, dim } => side.checked_pow(dim as u32).unwrap_or(usize::MAX),
        }
    }
}

/// Builds a member of a named family. Random regular graphs are delegated to
/// [`gen_random_regular`].
pub fn gen_named(family: &Family) -> Result<Graph, GraphError> {
    let bad = |msg: &str| GraphError::BadParams { family: family.name(), msg: msg.to_string() };
    match *family {
        Family::Cycle { n } => {
            if n < 3 {
                return Err(bad("cycle needs n >= 3"));
            }
            Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
        }
        Family::Path { n } => {
            if n < 2 {
                return Err(bad("path needs n >= 2"));
            }
            Graph::from_edges(n, (0..n - 1).map(|i| (i, i + 1)))
        }
        Family::Complete { n } => {
            if n < 2 {
                return Err(bad("complete graph needs n >= 2"));
            }
            Graph::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
        }
        Family::Torus { side, dim } => {
            if side < 3 || dim < 1 {
                return Err(bad("torus needs side >= 3 and dim >= 1"));
            }
            let n = side
                .checked_pow(dim as u32)
                .filter(|&n| n <= 1 << 26)
                .ok_or_else(|| bad("torus too large"))?;
            let mut pairs = Vec::with_capacity(n * dim);
            for x in 0..n {
                let mut stride = 1;
                for _ in 0..dim {
                    let coord = (x / stride) % side;
                    let y = x - coord * stride + ((coord + 1) % side) * stride;
                    pairs.push((x, y));
                    stride *= side;
                }
            }
            Graph::from_edges(n, pairs)
        }
        Family::Rrg { n, d, seed } => gen_random_regular(n, d, seed),
    }
}

/// Random `d`-regular simple connected graph via the configuration model.
///
/// Stubs are shuffled and paired; any pairing with a self-loop, a repeated
/// edge, or a disconnected result is discarded and re-drawn, up to
/// [`RRG_MAX_RETRIES`] times. Deterministic in `seed`.
pub fn gen_random_regular(n: usize, d: usize, seed: u64) -> Result<Graph, GraphError> {
    if d < 3 {
        return Err(GraphError::Precondition(format!("degree must be >= 3, got {d}")));
    }
    if n <= d {
        return Err(GraphError::Precondition(format!("need n > d, got n = {n}, d = {d}")));
    }
    if !(n * d).is_multiple_of(2) {
        return Err(GraphError::Precondition(format!("n * d must be even, got {n} * {d}")));
    }
    let mut rng = seed::rng(seed);
    let mut stubs: Vec<usize> = (0..n).flat_map(|x| std::iter::repeat_n(x, d)).collect();
    let mut seen = HashSet::with_capacity(n * d / 2);
    'attempt: for _ in 0..RRG_MAX_RETRIES {
        stubs.shuffle(&mut rng);
        seen.clear();
        for pair in stubs.chunks_exact(2) {
            let (u, v) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if u == v || !seen.insert((u, v)) {
                continue 'attempt;
            }
        }
        match Graph::from_edges(n, seen.iter().copied()) {
            Ok(g) => return Ok(g),
            Err(GraphError::Disconnected) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(GraphError::GenerationFailed(RRG_MAX_RETRIES))
}
