//! Node-wise temporal screening.
//!
//! One grouped predictor per target is fitted over the full candidate window
//! (all variables at lags `1..=L`, plus the other variables of the target's own
//! slice when instantaneous effects are modelled) under a group-norm penalty.
//! The column norms become edge scores, and thresholding them yields the
//! masks that bound the refinement stage.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::graph::{EdgeMasks, Support};
use crate::io::{matrix_rows, write_atomic};
use crate::predictor::{
    adam_step, window_groups, AdamState, Batch, Design, GroupId, LrSchedule, NodePredictor, PredictorKind,
};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "value")]
pub enum ThresholdRule {
    /// Per target row: keep scores `>= tau * row max`.
    Relative(f64),
    /// Globally: keep the top `q` fraction of the positive scores.
    Quantile(f64),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Relative(0.05)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub epochs: usize,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub predictor: PredictorKind,
    pub lr_schedule: LrSchedule,
    pub threshold: ThresholdRule,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            epochs: 200,
            lambda: 0.15,
            lr: 3e-3,
            batch_size: 64,
            hidden_width: 32,
            predictor: PredictorKind::Mlp,
            lr_schedule: LrSchedule::Linear,
            threshold: ThresholdRule::default(),
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_width == 0 {
            return Err(Error::invalid("stage 1 needs epochs, batch size and width >= 1"));
        }
        if !(self.lambda >= 0.0) || !(self.lr > 0.0) {
            return Err(Error::invalid("stage 1 needs lambda >= 0 and lr > 0"));
        }
        match self.threshold {
            ThresholdRule::Relative(t) if !(0.0..=1.0).contains(&t) => {
                Err(Error::invalid("relative threshold must lie in [0, 1]"))
            }
            ThresholdRule::Quantile(q) if !(q > 0.0 && q <= 1.0) => {
                Err(Error::invalid("quantile must lie in (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// Per-parent scores: `lag_scores[l][(j, i)]` for `(i, lag l+1) -> j`,
/// `instant_scores[(j, i)]` for `i -> j` in the same slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub lag_scores: Vec<DMatrix<f64>>,
    pub instant_scores: DMatrix<f64>,
}

impl ScoreTable {
    pub fn zeros(dim: usize, lag_order: usize) -> Self {
        Self {
            lag_scores: vec![DMatrix::zeros(dim, dim); lag_order],
            instant_scores: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.instant_scores.nrows()
    }

    pub fn lag_order(&self) -> usize {
        self.lag_scores.len()
    }

    /// Writes `scores` (ordered like `predictor.groups()`) into row `target`.
    pub fn set_row(&mut self, target: usize, groups: &[GroupId], scores: &[f64]) {
        for (g, &s) in groups.iter().zip(scores) {
            match *g {
                GroupId::Lagged { var, lag } => self.lag_scores[lag - 1][(target, var)] = s,
                GroupId::Instant { var } => self.instant_scores[(target, var)] = s,
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = serde_json::json!({
            "dim": self.dim(),
            "lag_order": self.lag_order(),
            "A": self.lag_scores.iter().map(matrix_rows).collect::<Vec<_>>(),
            "B": matrix_rows(&self.instant_scores),
        });
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}

/// Training pairs for every node. For each trajectory and each
/// `t in [L, T-2]`, the window holds `X_t, ..., X_{t+1-L}` and, when
/// `instantaneous`, `X_{t+1}` without the target coordinate; the target is
/// `X_{t+1}^j`. That gives `N (T - L - 1)` pairs per node.
pub fn build_design(ds: &TimeSeriesDataset, lag_order: usize, instantaneous: bool) -> Result<Vec<(Vec<GroupId>, Design)>> {
    let d = ds.dim();
    let horizon = ds.horizon();
    if lag_order == 0 {
        return Err(Error::invalid("lag order must be at least 1"));
    }
    if horizon <= lag_order + 1 {
        return Err(Error::invalid(format!(
            "need T > L + 1 to form training pairs, got T={horizon}, L={lag_order}"
        )));
    }
    let per_traj = horizon - lag_order - 1;
    let n = ds.num_trajectories() * per_traj;
    (0..d)
        .map(|j| {
            let groups = window_groups(d, lag_order, j, instantaneous);
            let width = groups.len();
            let mut windows = Vec::with_capacity(n * width);
            let mut targets = Vec::with_capacity(n);
            for traj in 0..ds.num_trajectories() {
                for t in lag_order..=horizon - 2 {
                    for g in &groups {
                        windows.push(match *g {
                            GroupId::Lagged { var, lag } => ds.value(traj, t + 1 - lag, var),
                            GroupId::Instant { var } => ds.value(traj, t + 1, var),
                        });
                    }
                    targets.push(ds.value(traj, t + 1, j));
                }
            }
            Ok((groups, Design::new(width, windows, targets)?))
        })
        .collect()
}

/// Minibatch Adam on squared error plus `lambda * sum of group norms`.
pub fn fit_node(
    target: usize,
    groups: Vec<GroupId>,
    design: &Design,
    config: &Stage1Config,
) -> Result<(NodePredictor, Vec<f64>)> {
    if design.is_empty() {
        return Err(Error::invalid(format!("node {target} has no training pairs")));
    }
    let mut rng = Rng::new(Rng::derive_seed(config.seed, target as u64));
    let mut predictor = NodePredictor::new(target, groups, config.predictor, config.hidden_width, &mut rng);
    let mut adam = AdamState::new(predictor.num_params(), config.lr);
    let mut order: Vec<usize> = (0..design.len()).collect();
    for epoch in 0..config.epochs {
        adam.lr = config.lr * config.lr_schedule.factor(epoch, config.epochs);
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let (loss, grad) = predictor
                .loss_and_grad(Batch::rows(design, chunk), config.lambda)
                .map_err(|e| relabel_divergence(e, target, epoch))?;
            if !loss.loss.is_finite() {
                return Err(Error::Diverged {
                    node: target,
                    epoch,
                    detail: "loss is not finite".into(),
                });
            }
            adam_step(predictor.params_mut(), &grad, &mut adam)?;
        }
        if predictor.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                node: target,
                epoch,
                detail: "parameters are not finite".into(),
            });
        }
    }
    let scores = predictor.group_scores();
    Ok((predictor, scores))
}

pub(crate) fn relabel_divergence(err: Error, node: usize, epoch: usize) -> Error {
    match err {
        Error::Diverged { detail, .. } => Error::Diverged { node, epoch, detail },
        other => other,
    }
}

/// Binary masks from scores. Instantaneous self-loops are never admitted.
pub fn threshold_masks(scores: &ScoreTable, rule: ThresholdRule) -> EdgeMasks {
    let d = scores.dim();
    let lags = scores.lag_order();
    let mut lag_masks = vec![Support::from_element(d, d, false); lags];
    let mut instant_mask = Support::from_element(d, d, false);
    match rule {
        ThresholdRule::Relative(tau) => {
            for j in 0..d {
                let lag_max = scores
                    .lag_scores
                    .iter()
                    .flat_map(|a| a.row(j).iter().copied().collect::<Vec<_>>())
                    .fold(0.0, f64::max);
                let inst_max = (0..d)
                    .filter(|&i| i != j)
                    .map(|i| scores.instant_scores[(j, i)])
                    .fold(0.0, f64::max);
                let row_max = lag_max.max(inst_max);
                if row_max <= 0.0 {
                    continue;
                }
                let cut = tau * row_max;
                for (l, a) in scores.lag_scores.iter().enumerate() {
                    for i in 0..d {
                        lag_masks[l][(j, i)] = a[(j, i)] >= cut && a[(j, i)] > 0.0;
                    }
                }
                for i in (0..d).filter(|&i| i != j) {
                    let s = scores.instant_scores[(j, i)];
                    instant_mask[(j, i)] = s >= cut && s > 0.0;
                }
            }
        }
        ThresholdRule::Quantile(q) => {
            // (score, block, j, i); block == lags means instantaneous.
            let mut entries: Vec<(f64, usize, usize, usize)> = Vec::new();
            for (l, a) in scores.lag_scores.iter().enumerate() {
                for j in 0..d {
                    for i in 0..d {
                        entries.push((a[(j, i)], l, j, i));
                    }
                }
            }
            for j in 0..d {
                for i in (0..d).filter(|&i| i != j) {
                    entries.push((scores.instant_scores[(j, i)], lags, j, i));
                }
            }
            entries.retain(|e| e.0 > 0.0);
            let keep = (q * entries.len() as f64).ceil() as usize;
            entries.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
                    .then(a.3.cmp(&b.3))
            });
            for &(_, block, j, i) in entries.iter().take(keep) {
                if block == lags {
                    instant_mask[(j, i)] = true;
                } else {
                    lag_masks[block][(j, i)] = true;
                }
            }
        }
    }
    EdgeMasks::new(lag_masks, instant_mask).expect("mask shapes follow the score table")
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub masks: EdgeMasks,
    pub scores: ScoreTable,
    pub predictors: Vec<NodePredictor>,
}

/// Fits every node (in parallel), assembles the score table and thresholds it.
pub fn run_stage1(
    ds: &TimeSeriesDataset,
    lag_order: usize,
    instantaneous: bool,
    config: &Stage1Config,
) -> Result<Stage1Output> {
    config.validate()?;
    let designs = build_design(ds, lag_order, instantaneous)?;
    let fitted: Vec<(NodePredictor, Vec<f64>)> = designs
        .into_par_iter()
        .enumerate()
        .map(|(j, (groups, design))| fit_node(j, groups, &design, config))
        .collect::<Result<_>>()?;
    let mut scores = ScoreTable::zeros(ds.dim(), lag_order);
    for (p, s) in &fitted {
        scores.set_row(p.target(), p.groups(), s);
    }
    let masks = threshold_masks(&scores, config.threshold);
    Ok(Stage1Output {
        masks,
        scores,
        predictors: fitted.into_iter().map(|(p, _)| p).collect(),
    })
}
