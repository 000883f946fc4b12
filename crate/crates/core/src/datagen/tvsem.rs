//! Two-variable regime-switching VAR(1) whose dominant direction reverses
//! every `period` steps. Variable 0 is `x`, variable 1 is `y`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{SystemTag, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::graph::DynamicGraph;
use crate::rng::{gaussian_vector, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvsemSpec {
    pub horizon: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub period: usize,
}

impl Default for TvsemSpec {
    fn default() -> Self {
        Self {
            horizon: 800,
            trajectories: 1,
            seed: 0,
            noise_sigma: 0.1,
            period: 200,
        }
    }
}

/// Which lag-1 edge carries the larger coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    XToY,
    YToX,
}

/// Coefficient matrix of regime `r` (0-based). Even regimes: `y -> x` 0.8,
/// `x -> y` 0.1; odd regimes: 0.2 and 0.7. Diagonal is zero.
pub fn tvsem_regime_matrix(regime: usize) -> DMatrix<f64> {
    let (y_to_x, x_to_y) = if regime.is_multiple_of(2) { (0.8, 0.1) } else { (0.2, 0.7) };
    DMatrix::from_row_slice(2, 2, &[0.0, y_to_x, x_to_y, 0.0])
}

pub fn tvsem_dominant(regime: usize) -> Direction {
    if regime.is_multiple_of(2) {
        Direction::YToX
    } else {
        Direction::XToY
    }
}

/// Regime active when producing `x_t`.
pub fn tvsem_regime_at(t: usize, period: usize) -> usize {
    t / period
}

pub fn tvsem_step(prev: &[f64], regime: usize, noise: &[f64]) -> Vec<f64> {
    let a = tvsem_regime_matrix(regime);
    (0..2)
        .map(|j| a[(j, 0)] * prev[0] + a[(j, 1)] * prev[1] + noise[j])
        .collect()
}

pub fn simulate_tvsem(spec: &TvsemSpec) -> Result<TimeSeriesDataset> {
    if spec.horizon < 2 || spec.trajectories == 0 || spec.period == 0 {
        return Err(Error::invalid("TVSEM needs T >= 2, N >= 1 and a positive period"));
    }
    let root = Rng::new(spec.seed);
    let mut values = Vec::with_capacity(spec.trajectories * spec.horizon * 2);
    for n in 0..spec.trajectories {
        let mut rng = root.derive(n as u64);
        let mut x = gaussian_vector(&mut rng, 2, spec.noise_sigma);
        values.extend_from_slice(&x);
        for t in 1..spec.horizon {
            let noise = gaussian_vector(&mut rng, 2, spec.noise_sigma);
            x = tvsem_step(&x, tvsem_regime_at(t, spec.period), &noise);
            values.extend_from_slice(&x);
        }
    }
    let boundaries: Vec<usize> = (1..)
        .map(|k| k * spec.period)
        .take_while(|&b| b < spec.horizon)
        .collect();
    let truth = DynamicGraph::new(vec![tvsem_regime_matrix(0)], DMatrix::zeros(2, 2), false)?;
    TimeSeriesDataset::new(spec.trajectories, spec.horizon, 2, values, SystemTag::Tvsem)?
        .with_truth(truth)?
        .with_regime_boundaries(boundaries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_one_step() {
        assert_eq!(tvsem_step(&[1.0, 1.0], 0, &[0.0, 0.0]), vec![0.8, 0.1]);
    }

    #[test]
    fn regime_two_step() {
        assert_eq!(tvsem_step(&[1.0, 1.0], 1, &[0.0, 0.0]), vec![0.2, 0.7]);
    }

    #[test]
    fn boundaries_every_period() {
        let ds = simulate_tvsem(&TvsemSpec::default()).unwrap();
        assert_eq!(ds.regime_boundaries(), Some(&[200usize, 400, 600][..]));
        assert_eq!(ds.horizon(), 800);
    }

    #[test]
    fn dominance_alternates() {
        assert_eq!(tvsem_dominant(0), Direction::YToX);
        assert_eq!(tvsem_dominant(1), Direction::XToY);
        assert_eq!(tvsem_regime_at(199, 200), 0);
        assert_eq!(tvsem_regime_at(200, 200), 1);
    }
}
