//! Monte Carlo sweeps of the largest open cluster over graph sizes and levels.
//!
//! Each `(n, trial)` cell samples one field and one uniform stream and
//! percolates it at every requested level, so results across levels are
//! coupled and `cmax` is monotone in `h` within a trial. Seeds:
//!
//! - graph: `mix(master, fnv1a(family), n, GRAPH_TAG)`
//! - trial: `mix(master, fnv1a(family), n, trial)`; uniforms use
//!   `seed::uniform_seed(trial seed)`
//! - bootstrap: `mix(seed, resample index)`
//!
//! Rows are produced in `(n, level, trial)` order whatever the thread count.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gff::{make_sampler, SamplerRoute};
use crate::graph::{gen_named, spectral_gap, Family, Graph, DENSE_THRESHOLD};
use crate::percolation::{clusters, edge_uniforms, percolate_with_uniforms};
use crate::seed;

const GRAPH_TAG: u64 = 0x0067_7261_7068;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid sweep: {0}")]
    BadSpec(String),
    #[error("need at least 3 distinct sizes, got {0}")]
    InsufficientData(usize),
    #[error("no rows to summarize")]
    EmptyInput,
}

/// Graph family of a sweep; the size comes from `n_list`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SweepFamily {
    Rrg { d: usize },
    Cycle,
    Path,
    Complete,
    Torus { dim: usize },
}

impl SweepFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SweepFamily::Rrg { .. } => "rrg",
            SweepFamily::Cycle => "cycle",
            SweepFamily::Path => "path",
            SweepFamily::Complete => "complete",
            SweepFamily::Torus { .. } => "torus",
        }
    }

    pub fn family(&self, n: usize, graph_seed: u64) -> Result<Family, ExperimentError> {
        Ok(match *self {
            SweepFamily::Rrg { d } => Family::Rrg { n, d, seed: graph_seed },
            SweepFamily::Cycle => Family::Cycle { n },
            SweepFamily::Path => Family::Path { n },
            SweepFamily::Complete => Family::Complete { n },
            SweepFamily::Torus { dim } => {
                let side = (n as f64).powf(1.0 / dim as f64).round() as usize;
                if side.checked_pow(dim as u32) != Some(n) {
                    return Err(ExperimentError::BadSpec(format!("n = {n} is not a {dim}-th power")));
                }
                Family::Torus { side, dim }
            }
        })
    }
}

/// A percolation level: inside the critical window `h = A n^{-1/3}`, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Window(f64),
    Fixed(f64),
}

impl Level {
    pub fn h(self, n: usize) -> f64 {
        match self {
            Level::Window(a) => a * (n as f64).powf(-1.0 / 3.0),
            Level::Fixed(h) => h,
        }
    }

    /// Window parameter `A = h n^{1/3}`.
    pub fn a(self, n: usize) -> f64 {
        match self {
            Level::Window(a) => a,
            Level::Fixed(h) => h * (n as f64).cbrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub family: SweepFamily,
    pub n_list: Vec<usize>,
    pub levels: Vec<Level>,
    pub trials: usize,
    pub master_seed: u64,
    /// `None` picks the eigen route up to the dense threshold and the
    /// iterative route above it.
    pub route: Option<SamplerRoute>,
    /// Record per-row wall time; off keeps output byte-reproducible.
    pub record_timing: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.trials == 0 {
            return Err(ExperimentError::BadSpec("trials must be >= 1".into()));
        }
        if self.n_list.is_empty() || self.levels.is_empty() {
            return Err(ExperimentError::BadSpec("need at least one size and one level".into()));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::BadSpec("n_list must be strictly ascending".into()));
        }
        Ok(())
    }

    fn route_for(&self, n: usize) -> SamplerRoute {
        self.route.unwrap_or(if n <= DENSE_THRESHOLD { SamplerRoute::Eigen } else { SamplerRoute::Iterative })
    }

    pub fn graph_seed(&self, n: usize) -> u64 {
        seed::mix(&[self.master_seed, seed::fnv1a(self.family.name()), n as u64, GRAPH_TAG])
    }

    pub fn trial_seed(&self, n: usize, trial: usize) -> u64 {
        seed::mix(&[self.master_seed, seed::fnv1a(self.family.name()), n as u64, trial as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub family: String,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "A")]
    pub a: f64,
    pub h: f64,
    pub trial: usize,
    pub seed: u64,
    pub cmax: Option<usize>,
    pub second_cmax: Option<usize>,
    pub num_clusters: Option<usize>,
    pub lambda_star: f64,
    pub wall_ms: f64,
    #[serde(skip)]
    pub level: Level,
    /// Set when the cell failed; the cluster fields are then absent.
    #[serde(skip)]
    pub error: Option<String>,
}

pub const CSV_HEADER: &str = "family,n,d,A,h,trial,seed,cmax,second_cmax,num_clusters,lambda_star,wall_ms";

pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<SweepRow>, ExperimentError> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::BadSpec(e.to_string()))?;
    let mut rows = Vec::new();
    for &n in &spec.n_list {
        rows.extend(pool.install(|| sweep_size(spec, n)));
    }
    Ok(rows)
}

fn sweep_size(spec: &SweepSpec, n: usize) -> Vec<SweepRow> {
    let family_name = spec.family.name().to_string();
    let base = |level: Level, trial: usize, d: usize, lambda: f64| SweepRow {
        family: family_name.clone(),
        n,
        d,
        a: level.a(n),
        h: level.h(n),
        trial,
        seed: spec.trial_seed(n, trial),
        cmax: None,
        second_cmax: None,
        num_clusters: None,
        lambda_star: lambda,
        wall_ms: 0.0,
        level,
        error: None,
    };
    let failed = |msg: String, d: usize, lambda: f64| -> Vec<SweepRow> {
        spec.levels
            .iter()
            .flat_map(|&level| (0..spec.trials).map(move |t| (level, t)))
            .map(|(level, t)| SweepRow { error: Some(msg.clone()), ..base(level, t, d, lambda) })
            .collect()
    };

    let graph = match spec.family.family(n, spec.graph_seed(n)).and_then(|f| {
        gen_named(&f).map_err(|e| ExperimentError::BadSpec(e.to_string()))
    }) {
        Ok(g) => g,
        Err(e) => return failed(e.to_string(), 0, f64::NAN),
    };
    let d = graph.d_max();
    let lambda = spectral_gap::<f64>(&graph).map(|r| r.lambda_star).unwrap_or(f64::NAN);
    let sampler = match make_sampler::<f64>(&graph, spec.route_for(n)) {
        Ok(s) => s,
        Err(e) => return failed(e.to_string(), d, lambda),
    };

    let per_trial: Vec<Vec<SweepRow>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let started = Instant::now();
            let trial_seed = spec.trial_seed(n, trial);
            let field = sampler.sample(trial_seed);
            let useed = seed::uniform_seed(trial_seed);
            let uniforms = edge_uniforms(&graph, useed);
            let shared_ms = started.elapsed().as_secs_f64() * 1e3 / spec.levels.len() as f64;
            spec.levels
                .iter()
                .map(|&level| {
                    let t0 = Instant::now();
                    let open = percolate_with_uniforms(&graph, &field, level.h(n), &uniforms, useed);
                    let st = clusters(&graph, &open);
                    let wall_ms = if spec.record_timing { shared_ms + t0.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
                    SweepRow {
                        cmax: Some(st.cmax),
                        second_cmax: st.second_cmax,
                        num_clusters: Some(st.num_clusters),
                        wall_ms,
                        ..base(level, trial, d, lambda)
                    }
                })
                .collect()
        })
        .collect();

    // reorder (trial, level) -> (level, trial)
    let mut rows = Vec::with_capacity(spec.trials * spec.levels.len());
    for li in 0..spec.levels.len() {
        rows.extend(per_trial.iter().map(|t| t[li].clone()));
    }
    rows
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// Writes rows under [`CSV_HEADER`]. Failed cells carry `NA` in the cluster
/// columns; an absent second cluster is written as `0`.
pub fn write_rows_csv<W: Write>(rows: &[SweepRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        let second = if r.error.is_some() { "NA".to_string() } else { r.second_cmax.unwrap_or(0).to_string() };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.family,
            r.n,
            r.d,
            r.a,
            r.h,
            r.trial,
            r.seed,
            opt(r.cmax),
            second,
            opt(r.num_clusters),
            r.lambda_star,
            r.wall_ms
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    /// `(n, median cmax)` per size.
    pub medians: Vec<(usize, f64)>,
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

fn median(v: &mut [f64]) -> f64 {
    quantile_sorted(sorted(v), 0.5)
}

fn sorted(v: &mut [f64]) -> &[f64] {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Linear interpolation between order statistics at `p (len - 1)`.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    crate::martingale::least_squares(x, y)
}

/// Slope of `log(median cmax)` against `log n` for the rows at `level`, with a
/// bootstrap standard error from resampling trials within each size.
pub fn estimate_exponent(rows: &[SweepRow], level: Level, bootstrap_seed: u64) -> Result<ExponentFit, ExperimentError> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.level == level) {
        if let Some(c) = r.cmax {
            by_n.entry(r.n).or_default().push(c as f64);
        }
    }
    if by_n.len() < 3 {
        return Err(ExperimentError::InsufficientData(by_n.len()));
    }
    let log_n: Vec<f64> = by_n.keys().map(|&n| (n as f64).ln()).collect();
    let medians: Vec<(usize, f64)> = by_n.iter().map(|(&n, v)| (n, median(&mut v.clone()))).collect();
    let log_med: Vec<f64> = medians.iter().map(|&(_, m)| m.ln()).collect();
    let (slope, intercept) = fit_line(&log_n, &log_med);

    let samples: Vec<&Vec<f64>> = by_n.values().collect();
    let slopes: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|b| {
            let mut rng = seed::rng(seed::mix(&[bootstrap_seed, b as u64]));
            let meds: Vec<f64> = samples
                .iter()
                .map(|v| {
                    let mut re: Vec<f64> = (0..v.len()).map(|_| v[rng.random_range(0..v.len())]).collect();
                    median(&mut re).ln()
                })
                .collect();
            fit_line(&log_n, &meds).0
        })
        .collect();
    let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
    let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (slopes.len() - 1) as f64;
    Ok(ExponentFit { slope, stderr: var.sqrt(), intercept, medians })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quantiles {
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub mean: f64,
}

impl Quantiles {
    fn of(values: &mut [f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let v = sorted(values);
        Self { p10: quantile_sorted(v, 0.1), p50: quantile_sorted(v, 0.5), p90: quantile_sorted(v, 0.9), mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub family: String,
    pub n: usize,
    pub level: Level,
    #[serde(rename = "A")]
    pub a: f64,
    pub h: f64,
    pub trials: usize,
    pub cmax: Quantiles,
    pub cmax_over_n: Quantiles,
    pub cmax_over_n23: Quantiles,
    pub cmax_over_log_n: Quantiles,
}

/// Per-`(n, level)` quantiles of `cmax` and its normalizations, in first-seen order.
pub fn summarize(rows: &[SweepRow]) -> Result<Vec<SummaryRow>, ExperimentError> {
    let mut groups: Vec<((usize, Level), Vec<&SweepRow>)> = Vec::new();
    for r in rows.iter().filter(|r| r.cmax.is_some()) {
        match groups.iter_mut().find(|(k, _)| *k == (r.n, r.level)) {
            Some((_, v)) => v.push(r),
            None => groups.push(((r.n, r.level), vec![r])),
        }
    }
    if groups.is_empty() {
        return Err(ExperimentError::EmptyInput);
    }
    Ok(groups
        .into_iter()
        .map(|((n, level), rs)| {
            let nf = n as f64;
            let raw: Vec<f64> = rs.iter().map(|r| r.cmax.unwrap_or(0) as f64).collect();
            let scaled = |s: f64| -> Vec<f64> { raw.iter().map(|c| c / s).collect() };
            SummaryRow {
                family: rs[0].family.clone(),
                n,
                level,
                a: level.a(n),
                h: level.h(n),
                trials: rs.len(),
                cmax: Quantiles::of(&mut raw.clone()),
                cmax_over_n: Quantiles::of(&mut scaled(nf)),
                cmax_over_n23: Quantiles::of(&mut scaled(nf.powf(2.0 / 3.0))),
                cmax_over_log_n: Quantiles::of(&mut scaled(nf.ln())),
            }
        })
        .collect())
}

/// Graph used by a sweep at size `n`.
pub fn sweep_graph(spec: &SweepSpec, n: usize) -> Result<Graph, ExperimentError> {
    let f = spec.family.family(n, spec.graph_seed(n))?;
    gen_named(&f).map_err(|e| ExperimentError::BadSpec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(ns: &[usize], cmax: impl Fn(usize) -> usize) -> Vec<SweepRow> {
        ns.iter()
            .flat_map(|&n| {
                (0..5).map(move |t| (n, t))
            })
            .map(|(n, t)| SweepRow {
                family: "rrg".into(),
                n,
                d: 3,
                a: 0.0,
                h: 0.0,
                trial: t,
                seed: 0,
                cmax: Some(cmax(n)),
                second_cmax: None,
                num_clusters: Some(1),
                lambda_star: 0.1,
                wall_ms: 0.0,
                level: Level::Window(0.0),
                error: None,
            })
            .collect()
    }

    #[test]
    fn exponent_of_exact_power_laws() {
        let rows = synthetic(&[8, 64, 512, 4096], |n| (n as f64).powf(2.0 / 3.0).round() as usize);
        let fit = estimate_exponent(&rows, Level::Window(0.0), 1).unwrap();
        assert!((fit.slope - 2.0 / 3.0).abs() < 1e-12);
        assert!(fit.stderr < 1e-12);
        let rows = synthetic(&[10, 20, 40], |n| 3 * n);
        assert!((estimate_exponent(&rows, Level::Window(0.0), 1).unwrap().slope - 1.0).abs() < 1e-12);
        let rows = synthetic(&[10, 20], |n| n);
        assert_eq!(estimate_exponent(&rows, Level::Window(0.0), 1), Err(ExperimentError::InsufficientData(2)));
    }

    #[test]
    fn summarize_single_row() {
        let rows = synthetic(&[100], |_| 7);
        let s = summarize(&rows[..1]).unwrap();
        assert_eq!(s.len(), 1);
        let q = &s[0].cmax;
        assert_eq!((q.p10, q.p50, q.p90, q.mean), (7.0, 7.0, 7.0, 7.0));
        assert!((s[0].cmax_over_n.p50 - 0.07).abs() < 1e-15);
        assert_eq!(summarize(&[]), Err(ExperimentError::EmptyInput));
    }

    #[test]
    fn quantile_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.1) - 1.4).abs() < 1e-12);
        assert!((quantile_sorted(&v, 0.9) - 4.6).abs() < 1e-12);
    }

    fn spec(levels: Vec<Level>, trials: usize) -> SweepSpec {
        SweepSpec {
            family: SweepFamily::Rrg { d: 3 },
            n_list: vec![64, 128],
            levels,
            trials,
            master_seed: 7,
            route: None,
            record_timing: false,
        }
    }

    #[test]
    fn row_counts_and_order() {
        let s = SweepSpec { n_list: vec![64], ..spec(vec![Level::Window(0.0)], 1) };
        assert_eq!(run_sweep(&s, 1).unwrap().len(), 1);
        let rows = run_sweep(&spec(vec![Level::Window(-1.0), Level::Fixed(0.3)], 4), 1).unwrap();
        assert_eq!(rows.len(), 16);
        assert_eq!((rows[5].n, rows[5].level, rows[5].trial), (64, Level::Fixed(0.3), 1));
        assert!((rows[5].a - 0.3 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn very_low_level_opens_everything() {
        let rows = run_sweep(&spec(vec![Level::Window(-1e6)], 5), 1).unwrap();
        assert!(rows.iter().all(|r| r.cmax == Some(r.n) && r.num_clusters == Some(1)));
    }

    #[test]
    fn coupled_levels_monotone() {
        let levels = vec![Level::Window(-2.0), Level::Window(0.0), Level::Window(2.0)];
        let rows = run_sweep(&spec(levels, 20), 1).unwrap();
        for n in [64, 128] {
            for t in 0..20 {
                let c: Vec<usize> = rows.iter().filter(|r| r.n == n && r.trial == t).map(|r| r.cmax.unwrap()).collect();
                assert!(c.windows(2).all(|w| w[0] >= w[1]), "{c:?}");
            }
        }
    }

    #[test]
    fn csv_is_thread_count_independent() {
        let s = spec(vec![Level::Window(0.0), Level::Fixed(-0.5)], 12);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_rows_csv(&run_sweep(&s, 1).unwrap(), &mut a).unwrap();
        write_rows_csv(&run_sweep(&s, 4).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().starts_with(&format!("{CSV_HEADER}\n")));
    }

    #[test]
    fn error_rows_for_bad_sizes() {
        let s = SweepSpec { family: SweepFamily::Torus { dim: 2 }, n_list: vec![15, 16], ..spec(vec![Level::Window(0.0)], 2) };
        let rows = run_sweep(&s, 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].error.is_some() && rows[0].cmax.is_none());
        assert!(rows[2].error.is_none());
        let mut out = Vec::new();
        write_rows_csv(&rows, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().lines().nth(1).unwrap().contains(",NA,NA,NA,"));
    }

    #[test]
    fn bad_specs() {
        assert!(run_sweep(&spec(vec![Level::Window(0.0)], 0), 1).is_err());
        let s = SweepSpec { n_list: vec![128, 64], ..spec(vec![Level::Window(0.0)], 1) };
        assert!(run_sweep(&s, 1).is_err());
    }
}
