use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{SystemTag, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::graph::DynamicGraph;
use crate::rng::{gaussian_vector, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lorenz96Spec {
    pub dim: usize,
    pub horizon: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub forcing: f64,
    pub dt: f64,
    pub noise_sigma: f64,
    pub init_sigma: f64,
    /// Steps simulated and discarded before recording.
    pub burn_in: usize,
}

impl Default for Lorenz96Spec {
    fn default() -> Self {
        Self {
            dim: 20,
            horizon: 200,
            trajectories: 1,
            seed: 0,
            forcing: 8.0,
            dt: 0.01,
            noise_sigma: 0.1,
            init_sigma: 0.01,
            burn_in: 0,
        }
    }
}

/// `dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F`, indices mod d.
pub fn lorenz96_derivative(x: &[f64], forcing: f64) -> Vec<f64> {
    let d = x.len();
    (0..d)
        .map(|i| {
            let next = x[(i + 1) % d];
            let prev = x[(i + d - 1) % d];
            let prev2 = x[(i + d - 2) % d];
            (next - prev2) * prev - x[i] + forcing
        })
        .collect()
}

/// One Euler step plus additive noise.
pub fn lorenz96_step(x: &[f64], forcing: f64, dt: f64, noise: &[f64]) -> Vec<f64> {
    lorenz96_derivative(x, forcing)
        .iter()
        .zip(x)
        .zip(noise)
        .map(|((dx, xi), e)| xi + dt * dx + e)
        .collect()
}

/// Lag-1 parents of node `i` are `{i-2, i-1, i, i+1}` mod d.
pub fn lorenz96_truth(dim: usize) -> DynamicGraph {
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for offset in [dim - 2, dim - 1, 0, 1] {
            a[(i, (i + offset) % dim)] = 1.0;
        }
    }
    DynamicGraph::new(vec![a], DMatrix::zeros(dim, dim), false)
        .expect("ring truth graph is well formed")
}

pub fn simulate_lorenz96(spec: &Lorenz96Spec) -> Result<TimeSeriesDataset> {
    if spec.dim < 4 {
        return Err(Error::invalid(format!(
            "Lorenz96 needs d >= 4 for its cyclic stencil, got {}",
            spec.dim
        )));
    }
    if spec.horizon == 0 || spec.trajectories == 0 {
        return Err(Error::invalid("T and N must be positive"));
    }
    let d = spec.dim;
    let root = Rng::new(spec.seed);
    let mut values = Vec::with_capacity(spec.trajectories * spec.horizon * d);
    for n in 0..spec.trajectories {
        let mut rng = root.derive(n as u64);
        let mut x: Vec<f64> = gaussian_vector(&mut rng, d, spec.init_sigma)
            .into_iter()
            .map(|e| spec.forcing + e)
            .collect();
        let total = spec.burn_in + spec.horizon;
        for t in 0..total {
            if t >= spec.burn_in {
                values.extend_from_slice(&x);
            }
            if t + 1 < total {
                let noise = gaussian_vector(&mut rng, d, 1.0);
                let scaled: Vec<f64> = noise.iter().map(|e| spec.noise_sigma * e).collect();
                x = lorenz96_step(&x, spec.forcing, spec.dt, &scaled);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Simulation(format!("Lorenz96 diverged at step {t}")));
                }
            }
        }
    }
    TimeSeriesDataset::new(spec.trajectories, spec.horizon, d, values, SystemTag::Lorenz96)?
        .with_truth(lorenz96_truth(d))
}
