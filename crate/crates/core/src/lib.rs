//! Zero-average Gaussian free field level-set percolation on finite graphs.
//!
//! The crate samples the zero-average GFF on a finite connected graph, opens
//! edges with the metric-graph level-set rule, computes cluster statistics,
//! and provides the potential theory behind the exploration martingale:
//! killed Green functions, hitting distributions, zero-average capacities and
//! the set-indexed martingale `M_K`. A Monte Carlo harness sweeps levels and
//! graph sizes to measure the largest-cluster scaling.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`, with `*32` variants for `f32`.

pub mod experiments;
pub mod gff;
pub mod graph;
mod lanczos;
pub mod martingale;
pub mod percolation;
pub mod potential;
pub mod scalar;
pub mod seed;

pub use graph::{edge_boundary, gen_named, gen_random_regular, Family, Graph, GraphError};
pub use scalar::Real;

pub type SpectralReport = graph::SpectralReport<f64>;
pub type Covariance = gff::Covariance<f64>;
pub type Sampler = gff::Sampler<f64>;
pub type FieldSample = gff::FieldSample<f64>;
pub type OpenEdgeSet = percolation::OpenEdgeSet<f64>;
pub type KilledGreen = potential::KilledGreen<f64>;
pub type CapacityResult = potential::CapacityResult<f64>;
pub type HarmonicExtension = potential::HarmonicExtension<f64>;
pub type MartingaleCoefficients = martingale::MartingaleCoefficients<f64>;
pub type ExplorationTrace = martingale::ExplorationTrace<f64>;

pub type Sampler32 = gff::Sampler<f32>;
pub type FieldSample32 = gff::FieldSample<f32>;
pub type CapacityResult32 = potential::CapacityResult<f32>;
pub type MartingaleCoefficients32 = martingale::MartingaleCoefficients<f32>;
