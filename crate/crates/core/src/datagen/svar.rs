//! Random structural VAR systems with lagged and instantaneous effects.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{SystemTag, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::graph::{topological_sort, DynamicGraph};
use crate::rng::{gaussian_vector, Rng};

const STATIONARITY_BOUND: f64 = 0.95;
const RESCALE_FACTOR: f64 = 0.9;
const MAX_RESCALES: usize = 200;
const INIT_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Linear,
    /// `tanh` applied to every lagged state before mixing by `A_l`.
    Tanh,
}

impl Nonlinearity {
    fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Linear => x,
            Nonlinearity::Tanh => x.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvarSpec {
    pub dim: usize,
    pub lag_order: usize,
    /// Expected number of parents per (node, lag).
    pub lag_indegree: f64,
    /// Expected instantaneous indegree; zero disables the instantaneous block.
    pub instant_indegree: f64,
    /// Weights are drawn from `±[weight_low, weight_high]`.
    pub weight_low: f64,
    pub weight_high: f64,
    pub noise_sigma: f64,
    pub nonlinearity: Nonlinearity,
    pub horizon: usize,
    pub trajectories: usize,
    pub burn_in: usize,
    /// Seeds the graph; independent of the noise seed.
    pub structure_seed: u64,
    pub seed: u64,
}

impl Default for SvarSpec {
    fn default() -> Self {
        Self {
            dim: 10,
            lag_order: 3,
            lag_indegree: 0.5,
            instant_indegree: 2.0,
            weight_low: 0.3,
            weight_high: 0.8,
            noise_sigma: 0.5,
            nonlinearity: Nonlinearity::Linear,
            horizon: 200,
            trajectories: 1,
            burn_in: 100,
            structure_seed: 0,
            seed: 0,
        }
    }
}

impl SvarSpec {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.lag_order == 0 || self.horizon == 0 || self.trajectories == 0 {
            return Err(Error::invalid("d, L, T and N must be positive"));
        }
        if !(0.0 < self.weight_low && self.weight_low <= self.weight_high) {
            return Err(Error::invalid("weight range must satisfy 0 < low <= high"));
        }
        if self.lag_indegree < 0.0 || self.instant_indegree < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::invalid("indegrees and noise scale must be nonnegative"));
        }
        Ok(())
    }
}

fn signed_weight(rng: &mut Rng, low: f64, high: f64) -> f64 {
    let magnitude = rng.uniform_range(low, high);
    if rng.bernoulli(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// Draws the ground-truth graph: `B` over a random topological order, lag
/// entries independently, then a common rescale of every `A_l` until the
/// reduced-form companion matrix has spectral radius below 0.95.
pub fn sample_svar_graph(spec: &SvarSpec) -> Result<DynamicGraph> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = Rng::new(spec.structure_seed);

    let instant_enabled = spec.instant_indegree > 0.0;
    let mut b = DMatrix::zeros(d, d);
    if instant_enabled && d > 1 {
        let mut order: Vec<usize> = (0..d).collect();
        rng.shuffle(&mut order);
        let p = (2.0 * spec.instant_indegree / (d - 1) as f64).min(1.0);
        for a in 0..d {
            for c in (a + 1)..d {
                if rng.bernoulli(p) {
                    b[(order[c], order[a])] = signed_weight(&mut rng, spec.weight_low, spec.weight_high);
                }
            }
        }
    }

    let p_lag = (spec.lag_indegree / d as f64).min(1.0);
    let mut lags = Vec::with_capacity(spec.lag_order);
    for _ in 0..spec.lag_order {
        let mut a = DMatrix::zeros(d, d);
        for j in 0..d {
            for i in 0..d {
                if rng.bernoulli(p_lag) {
                    a[(j, i)] = signed_weight(&mut rng, spec.weight_low, spec.weight_high);
                }
            }
        }
        lags.push(a);
    }

    let mixing = (DMatrix::identity(d, d) - &b)
        .try_inverse()
        .ok_or_else(|| Error::Simulation("I - B is singular".into()))?;
    let mut scale = 1.0;
    for _ in 0..MAX_RESCALES {
        let reduced: Vec<DMatrix<f64>> = lags.iter().map(|a| &mixing * a * scale).collect();
        if companion_spectral_radius(&reduced) < STATIONARITY_BOUND {
            let lags = lags.into_iter().map(|a| a * scale).collect();
            return DynamicGraph::new(lags, b, instant_enabled);
        }
        scale *= RESCALE_FACTOR;
    }
    Err(Error::Simulation(format!(
        "lag matrices still non-stationary after {MAX_RESCALES} rescales"
    )))
}

/// Spectral radius of the block companion matrix of `lags`.
pub fn companion_spectral_radius(lags: &[DMatrix<f64>]) -> f64 {
    let l = lags.len();
    if l == 0 {
        return 0.0;
    }
    let d = lags[0].nrows();
    let mut c = DMatrix::zeros(d * l, d * l);
    for (k, a) in lags.iter().enumerate() {
        c.view_mut((0, k * d), (d, d)).copy_from(a);
    }
    for k in 1..l {
        c.view_mut((k * d, (k - 1) * d), (d, d)).fill_with_identity();
    }
    spectral_radius(c)
}

/// Largest eigenvalue modulus. Plain `complex_eigenvalues` iterates without
/// a cap and can spin forever on some inputs, so the Schur step is bounded;
/// if it stalls, `||M^k||^(1/k)` with `k = 2^40` stands in.
pub fn spectral_radius(m: DMatrix<f64>) -> f64 {
    if let Some(schur) = m.clone().try_schur(1e-14, 100_000) {
        return schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    let (mut p, mut log_scale, mut k) = (m, 0.0f64, 1.0f64);
    for _ in 0..40 {
        let n = p.norm();
        if n == 0.0 {
            return 0.0;
        }
        p /= n;
        log_scale += n.ln();
        p = &p * &p;
        log_scale *= 2.0;
        k *= 2.0;
    }
    let n = p.norm();
    if n == 0.0 {
        0.0
    } else {
        ((log_scale + n.ln()) / k).exp()
    }
}

/// Solves `x = B x + rhs` by substitution along a topological order of `B`.
pub(crate) struct InstantSolver {
    order: Vec<usize>,
}

impl InstantSolver {
    pub(crate) fn new(b: &DMatrix<f64>) -> Result<Self> {
        let order = topological_sort(&b.map(|v| v != 0.0))
            .order()
            .ok_or_else(|| Error::Simulation("instantaneous graph has a cycle".into()))?;
        Ok(Self { order })
    }

    pub(crate) fn solve(&self, b: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        for &j in &self.order {
            let mut acc = rhs[j];
            for i in 0..b.ncols() {
                let w = b[(j, i)];
                if w != 0.0 {
                    acc += w * x[i];
                }
            }
            x[j] = acc;
        }
        x
    }
}

/// One SVAR transition. `history[0]` is `X_t`, `history[l-1]` is `X_{t+1-l}`.
pub fn svar_step(
    graph: &DynamicGraph,
    history: &[&[f64]],
    noise: &[f64],
    nonlinearity: Nonlinearity,
) -> Result<Vec<f64>> {
    let solver = InstantSolver::new(graph.instant_matrix())?;
    Ok(step_with(graph, &solver, history, noise, nonlinearity))
}

fn step_with(
    graph: &DynamicGraph,
    solver: &InstantSolver,
    history: &[&[f64]],
    noise: &[f64],
    nonlinearity: Nonlinearity,
) -> Vec<f64> {
    let d = graph.dim();
    let mut rhs = noise.to_vec();
    for (lag, past) in history.iter().enumerate().take(graph.lag_order()) {
        let a = graph.lag_matrix(lag + 1);
        let f: Vec<f64> = past.iter().map(|&x| nonlinearity.apply(x)).collect();
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += a[(j, i)] * f[i];
            }
            rhs[j] += acc;
        }
    }
    solver.solve(graph.instant_matrix(), &rhs)
}

/// Simulates `spec.trajectories` runs of the SVAR defined by `graph`.
pub fn simulate_svar_with_graph(graph: &DynamicGraph, spec: &SvarSpec) -> Result<TimeSeriesDataset> {
    spec.validate()?;
    let d = graph.dim();
    let l = graph.lag_order();
    let solver = InstantSolver::new(graph.instant_matrix())?;
    let root = Rng::new(spec.seed);
    let total = l + spec.burn_in + spec.horizon;
    let mut values = Vec::with_capacity(spec.trajectories * spec.horizon * d);
    for n in 0..spec.trajectories {
        let mut rng = root.derive(n as u64);
        let mut path: Vec<Vec<f64>> = Vec::with_capacity(total);
        for _ in 0..l {
            path.push(gaussian_vector(&mut rng, d, INIT_SIGMA));
        }
        while path.len() < total {
            let noise = gaussian_vector(&mut rng, d, spec.noise_sigma);
            let history: Vec<&[f64]> = path.iter().rev().take(l).map(|v| v.as_slice()).collect();
            let next = step_with(graph, &solver, &history, &noise, spec.nonlinearity);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Simulation(format!(
                    "trajectory {n} diverged at step {}",
                    path.len()
                )));
            }
            path.push(next);
        }
        for state in &path[total - spec.horizon..] {
            values.extend_from_slice(state);
        }
    }
    TimeSeriesDataset::new(spec.trajectories, spec.horizon, d, values, SystemTag::Svar)?
        .with_truth(graph.clone())
}

pub fn simulate_svar(spec: &SvarSpec) -> Result<TimeSeriesDataset> {
    let graph = sample_svar_graph(spec)?;
    simulate_svar_with_graph(&graph, spec)
}
