//! Constrained refinement of the screened predictors.
//!
//! All node predictors are trained jointly on
//!
//! ```text
//! sum_j mse_j + alpha sum_l |A_l|_1 + beta |B|_1 + gamma rho(B ⊙ B) + lambda_2c |B ⊙ B'|_1
//! ```
//!
//! where `A_l` and `B` are the group-score matrices of the current
//! predictors. `gamma` ramps linearly from zero. Every `extract_every` epochs
//! the support of `B` above `edge_tol` is checked; once it is acyclic with at
//! least `E_min` edges, `gamma` is frozen. The returned `B` is always hardened
//! to a DAG.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acyclic::{extract_dag, spectral_penalty, two_cycle_penalty, NILPOTENT_TOL};
use crate::eval::DEFAULT_EDGE_TOL;
use crate::error::{Error, Result};
use crate::graph::{count_true, is_acyclic, DynamicGraph, EdgeMasks};
use crate::predictor::{adam_step, AdamState, Batch, Design, GroupId, LrSchedule, NodePredictor, PredictorKind};
use crate::rng::Rng;
use crate::stage1::relabel_divergence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub epochs: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_2c: f64,
    pub gamma_max: f64,
    pub s_inst: f64,
    pub extract_every: usize,
    pub power_steps: usize,
    /// Instantaneous scores at or below this count as absent in the
    /// freezing check.
    pub edge_tol: f64,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub freeze_enabled: bool,
    pub two_cycle_enabled: bool,
    pub use_stage1_masks: bool,
    pub linear_predictor: bool,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1.25e-3,
            lr_schedule: LrSchedule::Linear,
            alpha: 0.02,
            beta: 0.001,
            lambda_2c: 0.05,
            gamma_max: 1000.0,
            s_inst: 2.0,
            extract_every: 10,
            power_steps: 15,
            edge_tol: DEFAULT_EDGE_TOL,
            batch_size: 64,
            hidden_width: 32,
            freeze_enabled: true,
            two_cycle_enabled: true,
            use_stage1_masks: true,
            linear_predictor: false,
            seed: 0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.extract_every == 0 || self.batch_size == 0 || self.power_steps == 0 {
            return Err(Error::invalid(
                "stage 2 needs epochs, extract_every, batch size and power steps >= 1",
            ));
        }
        let penalties = [self.alpha, self.beta, self.lambda_2c, self.gamma_max, self.s_inst, self.edge_tol];
        if penalties.iter().any(|p| !(*p >= 0.0)) || !(self.lr > 0.0) {
            return Err(Error::invalid("stage 2 penalties must be >= 0 and lr > 0"));
        }
        Ok(())
    }

    pub fn predictor_kind(&self) -> PredictorKind {
        if self.linear_predictor {
            PredictorKind::Linear
        } else {
            PredictorKind::Mlp
        }
    }

    /// Acyclicity weight at `epoch` of the unfrozen schedule.
    pub fn gamma_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return 0.0;
        }
        self.gamma_max * epoch as f64 / (self.epochs - 1) as f64
    }
}

/// Retained-edge fraction used by the freezing budget.
pub fn eta(dim: usize) -> f64 {
    match dim {
        0..=6 => 0.5,
        7..=20 => 0.65,
        _ => 0.8,
    }
}

/// Freezing budget `floor(eta(d) * s_inst * d)`.
pub fn e_min(dim: usize, s_inst: f64) -> usize {
    (eta(dim) * s_inst * dim as f64).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreezeState {
    pub frozen: bool,
    pub gamma_frozen_at: Option<f64>,
    pub epoch_frozen: Option<usize>,
    pub e_min: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub nll: f64,
    pub l1_lag: f64,
    pub l1_inst: f64,
    pub gamma: f64,
    pub rho: f64,
    pub two_cycle: f64,
    pub frozen: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "epoch,loss,nll,l1_lag,l1_inst,gamma,rho,two_cycle,frozen";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.loss,
                r.nll,
                r.l1_lag,
                r.l1_inst,
                r.gamma,
                r.rho,
                r.two_cycle,
                u8::from(r.frozen)
            ));
        }
        out
    }
}

/// Graph of group scores: `A_l[j, i]` is the score of `(i, l)` in node `j`'s
/// predictor (zero when masked out), `B[j, i]` likewise for instantaneous
/// inputs.
pub fn graph_from_predictors(predictors: &[NodePredictor], masks: &EdgeMasks, instant_enabled: bool) -> DynamicGraph {
    let d = masks.dim();
    let mut lags = vec![DMatrix::zeros(d, d); masks.lag_order()];
    let mut b = DMatrix::zeros(d, d);
    for p in predictors {
        let j = p.target();
        for (g, s) in p.groups().iter().zip(p.group_scores()) {
            match *g {
                GroupId::Lagged { var, lag } => {
                    if lag <= masks.lag_order() && masks.lag_allowed(lag, j, var) {
                        lags[lag - 1][(j, var)] = s;
                    }
                }
                GroupId::Instant { var } => {
                    if instant_enabled && var != j && masks.instant_allowed(j, var) {
                        b[(j, var)] = s;
                    }
                }
            }
        }
    }
    DynamicGraph::new(lags, b, instant_enabled).expect("scores are finite and B has a zero diagonal")
}

/// Instantaneous score matrix only.
fn instant_scores(predictors: &[NodePredictor], dim: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(dim, dim);
    for p in predictors {
        for (g, s) in p.groups().iter().zip(p.group_scores()) {
            if let GroupId::Instant { var } = *g {
                b[(p.target(), var)] = s;
            }
        }
    }
    b
}

/// Breakdown of one evaluation of the refinement objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Loss {
    pub total: f64,
    pub nll: f64,
    pub l1_lag: f64,
    pub l1_inst: f64,
    pub rho: f64,
    pub two_cycle: f64,
}

/// Objective and per-node gradients (in each predictor's parameter layout)
/// on the rows `rows` of every node's design (all rows when `None`).
pub fn stage2_loss(
    predictors: &[NodePredictor],
    designs: &[Design],
    rows: Option<&[usize]>,
    config: &Stage2Config,
    gamma: f64,
) -> Result<(Stage2Loss, Vec<Vec<f64>>)> {
    if predictors.len() != designs.len() {
        return Err(Error::ShapeMismatch("one design per predictor expected".into()));
    }
    let d = predictors.len();
    let fits: Vec<(f64, Vec<f64>)> = predictors
        .par_iter()
        .zip(designs.par_iter())
        .map(|(p, design)| {
            let batch = match rows {
                Some(r) => Batch::rows(design, r),
                None => Batch::all(design),
            };
            p.loss_and_grad(batch, 0.0).map(|(parts, grad)| (parts.mse, grad))
        })
        .collect::<Result<_>>()?;

    let b = instant_scores(predictors, d);
    let spectral = if gamma > 0.0 {
        Some(spectral_penalty(&b, config.power_steps, NILPOTENT_TOL))
    } else {
        None
    };
    let rho = spectral.as_ref().map_or(0.0, |s| s.rho);
    let (two_cycle, two_cycle_grad) = two_cycle_penalty(&b);
    let two_cycle_weight = if config.two_cycle_enabled { config.lambda_2c } else { 0.0 };

    let mut nll = 0.0;
    let mut l1_lag = 0.0;
    let mut l1_inst = 0.0;
    let mut grads = Vec::with_capacity(d);
    for (p, (mse, mut grad)) in predictors.iter().zip(fits) {
        nll += mse;
        let j = p.target();
        for (g, (group, score)) in p.groups().iter().zip(p.group_scores()).enumerate() {
            if !p.is_active(g) {
                continue;
            }
            let coeff = match *group {
                GroupId::Lagged { .. } => {
                    l1_lag += score;
                    config.alpha
                }
                GroupId::Instant { var } => {
                    l1_inst += score;
                    let mut c = config.beta + two_cycle_weight * two_cycle_grad[(j, var)];
                    if let Some(s) = &spectral {
                        c += gamma * s.grad_wrt_b[(j, var)];
                    }
                    c
                }
            };
            p.add_group_norm_grad(&mut grad, g, coeff);
        }
        grads.push(grad);
    }
    let total = nll + config.alpha * l1_lag + config.beta * l1_inst + gamma * rho + two_cycle_weight * two_cycle;
    Ok((
        Stage2Loss {
            total,
            nll,
            l1_lag,
            l1_inst,
            rho,
            two_cycle,
        },
        grads,
    ))
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub graph: DynamicGraph,
    pub freeze: FreezeState,
    pub log: TrainingLog,
    pub predictors: Vec<NodePredictor>,
}

/// Boolean keep-flags for every group of `p` under `masks`.
pub fn group_mask(p: &NodePredictor, masks: &EdgeMasks) -> Vec<bool> {
    let j = p.target();
    p.groups()
        .iter()
        .map(|g| match *g {
            GroupId::Lagged { var, lag } => lag <= masks.lag_order() && masks.lag_allowed(lag, j, var),
            GroupId::Instant { var } => var != j && masks.instant_allowed(j, var),
        })
        .collect()
}

/// Trains the masked predictors, warm-started from `init` when given
/// (freshly initialised otherwise), and returns the hardened graph.
pub fn run_stage2(
    designs: &[(Vec<GroupId>, Design)],
    masks: &EdgeMasks,
    init: Option<&[NodePredictor]>,
    instantaneous: bool,
    config: &Stage2Config,
) -> Result<Stage2Output> {
    config.validate()?;
    let d = masks.dim();
    if designs.len() != d {
        return Err(Error::ShapeMismatch(format!("{} designs for d={d}", designs.len())));
    }
    let n = designs[0].1.len();
    if n == 0 || designs.iter().any(|(_, des)| des.len() != n) {
        return Err(Error::invalid("every node needs the same nonzero number of pairs"));
    }

    let mut predictors: Vec<NodePredictor> = match init {
        Some(ps) => {
            if ps.len() != d {
                return Err(Error::ShapeMismatch("one initial predictor per node expected".into()));
            }
            if ps.iter().any(|p| p.kind() != config.predictor_kind()) {
                return Err(Error::invalid("initial predictors differ in kind from the stage 2 config"));
            }
            ps.to_vec()
        }
        None => designs
            .iter()
            .enumerate()
            .map(|(j, (groups, _))| {
                let mut rng = Rng::new(Rng::derive_seed(config.seed ^ 0x5eed_0002, j as u64));
                NodePredictor::new(j, groups.clone(), config.predictor_kind(), config.hidden_width, &mut rng)
            })
            .collect(),
    };
    for p in &mut predictors {
        let keep = group_mask(p, masks);
        p.apply_mask(&keep)?;
    }
    let node_designs: Vec<Design> = designs.iter().map(|(_, des)| des.clone()).collect();
    let mut adams: Vec<AdamState> = predictors
        .iter()
        .map(|p| AdamState::new(p.num_params(), config.lr))
        .collect();

    let budget = e_min(d, config.s_inst);
    let mut freeze = FreezeState {
        frozen: !instantaneous,
        gamma_frozen_at: if instantaneous { None } else { Some(0.0) },
        epoch_frozen: if instantaneous { None } else { Some(0) },
        e_min: budget,
    };
    let mut log = TrainingLog::default();
    let mut rng = Rng::new(Rng::derive_seed(config.seed, 0x5747_4532));
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        let gamma = if !instantaneous {
            0.0
        } else if freeze.frozen {
            freeze.gamma_frozen_at.unwrap_or(0.0)
        } else {
            config.gamma_at(epoch)
        };
        let lr = config.lr * config.lr_schedule.factor(epoch, config.epochs);
        for adam in &mut adams {
            adam.lr = lr;
        }
        rng.shuffle(&mut order);
        let mut sums = [0.0f64; 6];
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (loss, grads) = stage2_loss(&predictors, &node_designs, Some(chunk), config, gamma)
                .map_err(|e| relabel_divergence(e, 0, epoch))?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    node: 0,
                    epoch,
                    detail: "stage 2 objective is not finite".into(),
                });
            }
            predictors
                .par_iter_mut()
                .zip(adams.par_iter_mut())
                .zip(grads.par_iter())
                .try_for_each(|((p, adam), g)| adam_step(p.params_mut(), g, adam))?;
            for (s, v) in sums
                .iter_mut()
                .zip([loss.total, loss.nll, loss.l1_lag, loss.l1_inst, loss.rho, loss.two_cycle])
            {
                *s += v;
            }
            batches += 1;
        }
        if let Some((k, p)) = predictors
            .iter()
            .enumerate()
            .find(|(_, p)| p.params().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Diverged {
                node: k,
                epoch,
                detail: format!("parameters of node {} are not finite", p.target()),
            });
        }

        if instantaneous && config.freeze_enabled && !freeze.frozen && (epoch + 1) % config.extract_every == 0 {
            let support = instant_scores(&predictors, d).map(|v| v > config.edge_tol);
            if count_true(&support) >= budget && is_acyclic(&support) {
                freeze.frozen = true;
                freeze.gamma_frozen_at = Some(gamma);
                freeze.epoch_frozen = Some(epoch);
            }
        }

        let m = batches as f64;
        log.rows.push(LogRow {
            epoch,
            loss: sums[0] / m,
            nll: sums[1] / m,
            l1_lag: sums[2] / m,
            l1_inst: sums[3] / m,
            gamma,
            rho: sums[4] / m,
            two_cycle: sums[5] / m,
            frozen: freeze.frozen,
        });
    }

    let raw = graph_from_predictors(&predictors, masks, instantaneous);
    let graph = if instantaneous {
        let dag = extract_dag(raw.instant_matrix(), None);
        let b = raw.instant_matrix().zip_map(&dag, |v, keep| if keep { v } else { 0.0 });
        DynamicGraph::new(raw.lag_matrices().to_vec(), b, true)?
    } else {
        raw
    };
    Ok(Stage2Output {
        graph,
        freeze,
        log,
        predictors,
    })
}
