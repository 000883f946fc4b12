//! Eight-variable nonlinear benchmark with lag order four.
//!
//! The linear part is a fixed ring-plus-skip table. Each entry has a base
//! weight `w` and a set of active lags; at lag `l` its coefficient is
//! `w / (l + 1)`. On top of that, four lag-1 interactions use a sinusoid,
//! `tanh`, the soft cubic `z^3 / (1 + |z|)` and a rectifier, and `x4` is driven
//! by a deterministic sinusoid in time. The update is clamped to `[-5, 5]`.
//!
//! | kind       | edge      | weight | lags    |
//! |------------|-----------|--------|---------|
//! | linear     | x0 -> x0  | 0.8    | 1, 2    |
//! | linear     | x0 -> x1  | 1.2    | 1       |
//! | linear     | x1 -> x2  | 1.2    | 2       |
//! | linear     | x2 -> x3  | 1.0    | 1       |
//! | linear     | x3 -> x5  | 1.6    | 3       |
//! | linear     | x5 -> x6  | 1.2    | 2       |
//! | linear     | x6 -> x6  | 0.8    | 1       |
//! | linear     | x4 -> x7  | 1.0    | 1       |
//! | linear     | x7 -> x0  | 2.0    | 4       |
//! | sinusoid   | x7 -> x1  | 0.8    | 1       |
//! | tanh       | x1 -> x3  | 0.8    | 1       |
//! | soft cubic | x2 -> x5  | 0.6    | 1       |
//! | rectifier  | x3 -> x6  | 0.8    | 1       |
//! | driver     | t -> x4   | 0.5    | period 20 |

use std::f64::consts::TAU;

use nalgebra::DMatrix;

use crate::dataset::{SystemTag, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::graph::DynamicGraph;
use crate::rng::{gaussian_vector, Rng};

pub const NC8_DIM: usize = 8;
pub const NC8_LAGS: usize = 4;
pub const NC8_CLAMP: f64 = 5.0;
pub const NC8_DRIVEN: usize = 4;
const NC8_SIGMA: f64 = 0.1;
const DRIVER_AMPLITUDE: f64 = 0.5;
const DRIVER_PERIOD: f64 = 20.0;
const BURN_IN: usize = 100;

struct LinearEdge {
    source: usize,
    target: usize,
    weight: f64,
    lags: &'static [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interaction {
    Sinusoid,
    Tanh,
    SoftCubic,
    Rectifier,
}

impl Interaction {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Interaction::Sinusoid => z.sin(),
            Interaction::Tanh => z.tanh(),
            Interaction::SoftCubic => soft_cubic(z),
            Interaction::Rectifier => z.max(0.0),
        }
    }
}

struct NonlinearEdge {
    source: usize,
    target: usize,
    gain: f64,
    kind: Interaction,
}

const LINEAR: &[LinearEdge] = &[
    LinearEdge { source: 0, target: 0, weight: 0.8, lags: &[1, 2] },
    LinearEdge { source: 0, target: 1, weight: 1.2, lags: &[1] },
    LinearEdge { source: 1, target: 2, weight: 1.2, lags: &[2] },
    LinearEdge { source: 2, target: 3, weight: 1.0, lags: &[1] },
    LinearEdge { source: 3, target: 5, weight: 1.6, lags: &[3] },
    LinearEdge { source: 5, target: 6, weight: 1.2, lags: &[2] },
    LinearEdge { source: 6, target: 6, weight: 0.8, lags: &[1] },
    LinearEdge { source: 4, target: 7, weight: 1.0, lags: &[1] },
    LinearEdge { source: 7, target: 0, weight: 2.0, lags: &[4] },
];

const NONLINEAR: &[NonlinearEdge] = &[
    NonlinearEdge { source: 7, target: 1, gain: 0.8, kind: Interaction::Sinusoid },
    NonlinearEdge { source: 1, target: 3, gain: 0.8, kind: Interaction::Tanh },
    NonlinearEdge { source: 2, target: 5, gain: 0.6, kind: Interaction::SoftCubic },
    NonlinearEdge { source: 3, target: 6, gain: 0.8, kind: Interaction::Rectifier },
];

pub fn soft_cubic(z: f64) -> f64 {
    z.powi(3) / (1.0 + z.abs())
}

/// Value of the exogenous driver added to `x4` at time `t`.
pub fn nc8_driver(t: usize) -> f64 {
    DRIVER_AMPLITUDE * (TAU * t as f64 / DRIVER_PERIOD).sin()
}

/// Linear coefficient matrices `A^(1..4)`.
pub fn nc8_linear_matrices() -> Vec<DMatrix<f64>> {
    let mut lags = vec![DMatrix::zeros(NC8_DIM, NC8_DIM); NC8_LAGS];
    for e in LINEAR {
        for &l in e.lags {
            lags[l - 1][(e.target, e.source)] = e.weight / (l as f64 + 1.0);
        }
    }
    lags
}

/// Nonlinear part `Phi(x_{t-1}, t)`.
pub fn nc8_phi(prev: &[f64], t: usize) -> Vec<f64> {
    let mut out = vec![0.0; NC8_DIM];
    for e in NONLINEAR {
        out[e.target] += e.gain * e.kind.apply(prev[e.source]);
    }
    out[NC8_DRIVEN] += nc8_driver(t);
    out
}

/// Ground truth: linear supports per lag plus the lag-1 interaction edges.
/// The driver has no parent in the graph; there are no instantaneous edges.
pub fn nc8_truth() -> DynamicGraph {
    let mut lags = nc8_linear_matrices();
    for e in NONLINEAR {
        lags[0][(e.target, e.source)] += e.gain;
    }
    DynamicGraph::new(lags, DMatrix::zeros(NC8_DIM, NC8_DIM), false)
        .expect("NC8 table is well formed")
}

/// One update. `history[0]` is `x_{t-1}`, `history[l-1]` is `x_{t-l}`.
pub fn nc8_step(history: &[&[f64]], t: usize, noise: &[f64]) -> Vec<f64> {
    let lags = nc8_linear_matrices();
    let mut x = nc8_phi(history[0], t);
    for (l, past) in history.iter().enumerate().take(NC8_LAGS) {
        let a = &lags[l];
        for (j, xj) in x.iter_mut().enumerate() {
            for (i, &p) in past.iter().enumerate() {
                *xj += a[(j, i)] * p;
            }
        }
    }
    x.iter()
        .zip(noise)
        .map(|(v, e)| (v + e).clamp(-NC8_CLAMP, NC8_CLAMP))
        .collect()
}

pub fn simulate_nc8(horizon: usize, trajectories: usize, seed: u64) -> Result<TimeSeriesDataset> {
    if horizon == 0 || trajectories == 0 {
        return Err(Error::invalid("T and N must be positive"));
    }
    let root = Rng::new(seed);
    let total = NC8_LAGS + BURN_IN + horizon;
    let mut values = Vec::with_capacity(trajectories * horizon * NC8_DIM);
    for n in 0..trajectories {
        let mut rng = root.derive(n as u64);
        let mut path: Vec<Vec<f64>> = (0..NC8_LAGS)
            .map(|_| gaussian_vector(&mut rng, NC8_DIM, NC8_SIGMA))
            .collect();
        while path.len() < total {
            let t = path.len();
            let noise = gaussian_vector(&mut rng, NC8_DIM, NC8_SIGMA);
            let history: Vec<&[f64]> = path.iter().rev().take(NC8_LAGS).map(|v| v.as_slice()).collect();
            path.push(nc8_step(&history, t, &noise));
        }
        for state in &path[total - horizon..] {
            values.extend_from_slice(state);
        }
    }
    TimeSeriesDataset::new(trajectories, horizon, NC8_DIM, values, SystemTag::Nc8)?
        .with_truth(nc8_truth())
}
