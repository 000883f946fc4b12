//! Two-stage differentiable causal discovery for multivariate time series.
//!
//! A per-node group-sparse screen ([`stage1`]) prunes candidate parents, then a
//! jointly trained refinement ([`stage2`]) with a spectral acyclicity penalty
//! recovers lagged matrices `A_l` and an acyclic instantaneous matrix `B`.
//! Matrices follow the convention `M[(j, i)] != 0` for an edge `i -> j`.

pub mod acyclic;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod stage1;
pub mod stage2;

pub use dataset::{Scaling, Standardizer, SystemTag, TimeSeriesDataset};
pub use error::{Error, ParseError, Result};
pub use graph::{DynamicGraph, EdgeMasks, Support};
pub use rng::Rng;
