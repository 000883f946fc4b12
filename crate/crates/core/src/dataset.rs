//! Multi-trajectory time series container.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DynamicGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemTag {
    Svar,
    Lorenz96,
    Tvsem,
    Nc8,
    External,
}

impl std::fmt::Display for SystemTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SystemTag::Svar => "svar",
            SystemTag::Lorenz96 => "lorenz96",
            SystemTag::Tvsem => "tvsem",
            SystemTag::Nc8 => "nc8",
            SystemTag::External => "external",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for SystemTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svar" => Ok(SystemTag::Svar),
            "lorenz96" => Ok(SystemTag::Lorenz96),
            "tvsem" => Ok(SystemTag::Tvsem),
            "nc8" => Ok(SystemTag::Nc8),
            "external" => Ok(SystemTag::External),
            other => Err(Error::invalid(format!("unknown system `{other}`"))),
        }
    }
}

/// `N` trajectories of `T` steps over `d` variables, stored trajectory-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    num_trajectories: usize,
    horizon: usize,
    dim: usize,
    values: Vec<f64>,
    system_tag: SystemTag,
    truth: Option<DynamicGraph>,
    regime_boundaries: Option<Vec<usize>>,
}

impl TimeSeriesDataset {
    pub fn new(
        num_trajectories: usize,
        horizon: usize,
        dim: usize,
        values: Vec<f64>,
        system_tag: SystemTag,
    ) -> Result<Self> {
        if num_trajectories == 0 || horizon == 0 || dim == 0 {
            return Err(Error::invalid("N, T and d must all be positive"));
        }
        if values.len() != num_trajectories * horizon * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for N={num_trajectories}, T={horizon}, d={dim}",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at flat index {k}")));
        }
        Ok(Self {
            num_trajectories,
            horizon,
            dim,
            values,
            system_tag,
            truth: None,
            regime_boundaries: None,
        })
    }

    pub fn with_truth(mut self, truth: DynamicGraph) -> Result<Self> {
        if truth.dim() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "truth has d={}, dataset has d={}",
                truth.dim(),
                self.dim
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn with_regime_boundaries(mut self, boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("regime boundaries must be strictly increasing"));
        }
        if boundaries.last().is_some_and(|&b| b >= self.horizon) {
            return Err(Error::invalid("regime boundaries must lie before T"));
        }
        self.regime_boundaries = Some(boundaries);
        Ok(self)
    }

    pub fn num_trajectories(&self) -> usize {
        self.num_trajectories
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn system_tag(&self) -> SystemTag {
        self.system_tag
    }

    pub fn truth(&self) -> Option<&DynamicGraph> {
        self.truth.as_ref()
    }

    pub fn regime_boundaries(&self) -> Option<&[usize]> {
        self.regime_boundaries.as_deref()
    }

    pub fn value(&self, traj: usize, t: usize, var: usize) -> f64 {
        self.values[(traj * self.horizon + t) * self.dim + var]
    }

    /// State vector `X_t` of one trajectory.
    pub fn state(&self, traj: usize, t: usize) -> &[f64] {
        let start = (traj * self.horizon + t) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Time slice `[start, start + len)` of every trajectory. Regime
    /// boundaries are shifted into the window; truth is kept.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.horizon {
            return Err(Error::invalid(format!(
                "window [{start}, {}) outside horizon {}",
                start + len,
                self.horizon
            )));
        }
        let mut values = Vec::with_capacity(self.num_trajectories * len * self.dim);
        for n in 0..self.num_trajectories {
            for t in start..start + len {
                values.extend_from_slice(self.state(n, t));
            }
        }
        let mut out = Self::new(self.num_trajectories, len, self.dim, values, self.system_tag)?;
        out.truth = self.truth.clone();
        out.regime_boundaries = self.regime_boundaries.as_ref().map(|b| {
            b.iter()
                .filter(|&&x| x > start && x < start + len)
                .map(|&x| x - start)
                .collect()
        });
        Ok(out)
    }

    /// Copy with every value replaced through `f(var, value)`.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for (k, v) in out.values.iter_mut().enumerate() {
            *v = f(k % self.dim, *v);
        }
        out
    }
}

/// How variables are rescaled before discovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// Raw values.
    None,
    /// Centre each variable and divide all of them by one pooled standard
    /// deviation, so relative scales between variables survive.
    #[default]
    Pooled,
    /// Per-variable z-scores.
    Zscore,
}

/// Affine per-variable rescaling fitted on one dataset and reusable on others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &TimeSeriesDataset) -> Self {
        let d = ds.dim();
        let count = (ds.values().len() / d) as f64;
        let mut means = vec![0.0; d];
        for (k, v) in ds.values().iter().enumerate() {
            means[k % d] += v;
        }
        means.iter_mut().for_each(|m| *m /= count);
        let mut vars = vec![0.0; d];
        for (k, v) in ds.values().iter().enumerate() {
            vars[k % d] += (v - means[k % d]).powi(2);
        }
        let scales = vars
            .into_iter()
            .map(|v| {
                let sd = (v / count).sqrt();
                // Constant columns are centred but not scaled.
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { means, scales }
    }

    /// Per-variable means with the root-mean-square of the per-variable
    /// standard deviations as a common scale.
    pub fn fit_pooled(ds: &TimeSeriesDataset) -> Self {
        let z = Self::fit(ds);
        let d = z.scales.len() as f64;
        let pooled = (z.scales.iter().map(|s| s * s).sum::<f64>() / d).sqrt();
        Self {
            scales: vec![pooled; z.scales.len()],
            means: z.means,
        }
    }

    pub fn fit_with(ds: &TimeSeriesDataset, scaling: Scaling) -> Self {
        match scaling {
            Scaling::None => Self::identity(ds.dim()),
            Scaling::Pooled => Self::fit_pooled(ds),
            Scaling::Zscore => Self::fit(ds),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            means: vec![0.0; dim],
            scales: vec![1.0; dim],
        }
    }

    pub fn apply(&self, ds: &TimeSeriesDataset) -> TimeSeriesDataset {
        ds.map_values(|var, v| (v - self.means[var]) / self.scales[var])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, t: usize, d: usize) -> TimeSeriesDataset {
        let values = (0..n * t * d).map(|k| k as f64).collect();
        TimeSeriesDataset::new(n, t, d, values, SystemTag::External).unwrap()
    }

    #[test]
    fn pooled_scale_keeps_variance_ratios() {
        // x0 has SD 1, x1 has SD 3: pooled scale is sqrt((1 + 9) / 2).
        let values = vec![-1.0, -3.0, 1.0, 3.0, -1.0, -3.0, 1.0, 3.0];
        let ds = TimeSeriesDataset::new(1, 4, 2, values, SystemTag::External).unwrap();
        let s = Standardizer::fit_pooled(&ds);
        assert_eq!(s.means, vec![0.0, 0.0]);
        assert!((s.scales[0] - 5f64.sqrt()).abs() < 1e-12);
        let out = s.apply(&ds);
        assert!((out.value(0, 1, 1) / out.value(0, 1, 0) - 3.0).abs() < 1e-12);
        assert_eq!(Standardizer::fit_with(&ds, Scaling::None), Standardizer::identity(2));
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(TimeSeriesDataset::new(1, 3, 2, vec![0.0; 5], SystemTag::External).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let mut v = vec![0.0; 6];
        v[4] = f64::NAN;
        assert!(TimeSeriesDataset::new(1, 3, 2, v, SystemTag::External).is_err());
    }

    #[test]
    fn boundaries_validated() {
        assert!(ramp(1, 10, 2).with_regime_boundaries(vec![3, 3]).is_err());
        assert!(ramp(1, 10, 2).with_regime_boundaries(vec![3, 10]).is_err());
        assert!(ramp(1, 10, 2).with_regime_boundaries(vec![3, 9]).is_ok());
    }

    #[test]
    fn indexing_is_trajectory_major() {
        let ds = ramp(2, 3, 2);
        assert_eq!(ds.value(1, 2, 1), 11.0);
        assert_eq!(ds.state(0, 1), &[2.0, 3.0]);
    }

    #[test]
    fn window_shifts_boundaries() {
        let ds = ramp(1, 10, 1).with_regime_boundaries(vec![4, 8]).unwrap();
        let w = ds.window(2, 5).unwrap();
        assert_eq!(w.horizon(), 5);
        assert_eq!(w.state(0, 0), &[2.0]);
        assert_eq!(w.regime_boundaries(), Some(&[2usize][..]));
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let ds = ramp(2, 5, 3);
        let z = Standardizer::fit(&ds).apply(&ds);
        let s = Standardizer::fit(&z);
        for k in 0..3 {
            assert!(s.means[k].abs() < 1e-12);
            assert!((s.scales[k] - 1.0).abs() < 1e-12);
        }
    }
}
