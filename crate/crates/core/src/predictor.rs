//! Node-wise conditional predictor with a grouped first layer.
//!
//! Each candidate parent owns one column of the first layer; the Euclidean
//! norm of that column is the parent's edge score. The model is
//!
//! ```text
//! y = c + v' tanh(W x + b)        (MLP)
//! y = c + w' x                    (linear variant, one "hidden" row)
//! ```
//!
//! trained on squared error (a unit-variance Gaussian likelihood) plus a
//! group-norm penalty. Gradients are written out by hand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Smoothing added to column norms when differentiating them.
pub const GROUP_NORM_EPS: f64 = 1e-12;

/// One candidate input of a node predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupId {
    /// Variable `var` at lag `lag` (1-based).
    Lagged { var: usize, lag: usize },
    /// Variable `var` in the same time slice as the target.
    Instant { var: usize },
}

/// Candidate parents of `target`: every (variable, lag) for lags `1..=L`,
/// then every other variable instantaneously when `instantaneous` is set.
pub fn window_groups(dim: usize, lag_order: usize, target: usize, instantaneous: bool) -> Vec<GroupId> {
    let mut groups: Vec<GroupId> = (1..=lag_order)
        .flat_map(|lag| (0..dim).map(move |var| GroupId::Lagged { var, lag }))
        .collect();
    if instantaneous {
        groups.extend((0..dim).filter(|&v| v != target).map(|var| GroupId::Instant { var }));
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    #[default]
    Mlp,
    Linear,
}

/// Learning-rate schedule over a run of `epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear decay from the base rate towards zero at the last epoch.
    Linear,
}

impl LrSchedule {
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear => 1.0 - epoch as f64 / epochs.max(1) as f64,
        }
    }
}

/// Row-major training pairs for one node: `len` windows of `width` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    width: usize,
    windows: Vec<f64>,
    targets: Vec<f64>,
}

impl Design {
    pub fn new(width: usize, windows: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if width == 0 || windows.len() != width * targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} window values for {} targets of width {width}",
                windows.len(),
                targets.len()
            )));
        }
        Ok(Self {
            width,
            windows,
            targets,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window(&self, row: usize) -> &[f64] {
        &self.windows[row * self.width..(row + 1) * self.width]
    }

    pub fn target(&self, row: usize) -> f64 {
        self.targets[row]
    }
}

/// A subset of rows of a [`Design`].
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub design: &'a Design,
    pub rows: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn all(design: &'a Design) -> Self {
        Self { design, rows: None }
    }

    pub fn rows(design: &'a Design, rows: &'a [usize]) -> Self {
        Self {
            design,
            rows: Some(rows),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.map_or(self.design.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn row_index(&self, k: usize) -> usize {
        self.rows.map_or(k, |r| r[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// `mse + penalty`.
    pub loss: f64,
    pub mse: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodePredictor {
    target: usize,
    groups: Vec<GroupId>,
    kind: PredictorKind,
    hidden: usize,
    /// Column-major first layer (one column per group), then hidden bias,
    /// output weights and output bias. The linear variant stores one weight
    /// per group followed by the bias.
    params: Vec<f64>,
    active: Vec<bool>,
}

impl NodePredictor {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn new(target: usize, groups: Vec<GroupId>, kind: PredictorKind, hidden: usize, rng: &mut Rng) -> Self {
        let g = groups.len();
        let hidden = match kind {
            PredictorKind::Mlp => hidden.max(1),
            PredictorKind::Linear => 1,
        };
        let mut params = vec![0.0; Self::param_len(kind, g, hidden)];
        let first_bound = 1.0 / (g.max(1) as f64).sqrt();
        for w in &mut params[..g * hidden] {
            *w = rng.uniform_range(-first_bound, first_bound);
        }
        if kind == PredictorKind::Mlp {
            let out_bound = 1.0 / (hidden as f64).sqrt();
            let start = g * hidden + hidden;
            for w in &mut params[start..start + hidden] {
                *w = rng.uniform_range(-out_bound, out_bound);
            }
        }
        Self {
            target,
            groups,
            kind,
            hidden,
            params,
            active: vec![true; g],
        }
    }

    /// MLP from explicit parts. `first_layer[g]` is the column of group `g`.
    pub fn from_parts(
        target: usize,
        groups: Vec<GroupId>,
        first_layer: Vec<Vec<f64>>,
        hidden_bias: Vec<f64>,
        output_weights: Vec<f64>,
        output_bias: f64,
    ) -> Result<Self> {
        let hidden = hidden_bias.len();
        if hidden == 0
            || output_weights.len() != hidden
            || first_layer.len() != groups.len()
            || first_layer.iter().any(|c| c.len() != hidden)
        {
            return Err(Error::ShapeMismatch("inconsistent predictor parts".into()));
        }
        let mut params: Vec<f64> = first_layer.into_iter().flatten().collect();
        params.extend(hidden_bias);
        params.extend(output_weights);
        params.push(output_bias);
        let g = groups.len();
        Ok(Self {
            target,
            groups,
            kind: PredictorKind::Mlp,
            hidden,
            params,
            active: vec![true; g],
        })
    }

    /// Linear variant from explicit weights.
    pub fn linear_from_parts(target: usize, groups: Vec<GroupId>, weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.len() != groups.len() {
            return Err(Error::ShapeMismatch("one weight per group expected".into()));
        }
        let g = groups.len();
        let mut params = weights;
        params.push(bias);
        Ok(Self {
            target,
            groups,
            kind: PredictorKind::Linear,
            hidden: 1,
            params,
            active: vec![true; g],
        })
    }

    fn param_len(kind: PredictorKind, groups: usize, hidden: usize) -> usize {
        match kind {
            PredictorKind::Mlp => groups * hidden + 2 * hidden + 1,
            PredictorKind::Linear => groups + 1,
        }
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn groups(&self) -> &[GroupId] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_active(&self, group: usize) -> bool {
        self.active[group]
    }

    /// First-layer column of `group`.
    pub fn column(&self, group: usize) -> &[f64] {
        &self.params[group * self.hidden..(group + 1) * self.hidden]
    }

    fn column_range(&self, group: usize) -> std::ops::Range<usize> {
        group * self.hidden..(group + 1) * self.hidden
    }

    fn hidden_bias_offset(&self) -> usize {
        self.groups.len() * self.hidden
    }

    pub fn output_bias(&self) -> f64 {
        *self.params.last().expect("parameters are never empty")
    }

    /// Zeroes and freezes every group whose flag is false.
    pub fn apply_mask(&mut self, keep: &[bool]) -> Result<()> {
        if keep.len() != self.groups.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries for {} groups",
                keep.len(),
                self.groups.len()
            )));
        }
        for (g, &k) in keep.iter().enumerate() {
            if !k {
                let range = self.column_range(g);
                self.params[range].iter_mut().for_each(|w| *w = 0.0);
            }
            self.active[g] = self.active[g] && k;
        }
        Ok(())
    }

    /// Euclidean norm of each first-layer column, in group order.
    pub fn group_scores(&self) -> Vec<f64> {
        (0..self.groups.len()).map(|g| norm(self.column(g))).collect()
    }

    pub fn forward(&self, window: &[f64]) -> Result<f64> {
        if window.len() != self.groups.len() {
            return Err(Error::ShapeMismatch(format!(
                "window has {} entries, predictor expects {}",
                window.len(),
                self.groups.len()
            )));
        }
        let mut hidden = vec![0.0; self.hidden];
        Ok(self.predict(window, &mut hidden))
    }

    /// Prediction; leaves hidden activations in `act`.
    fn predict(&self, window: &[f64], act: &mut [f64]) -> f64 {
        let h = self.hidden;
        match self.kind {
            PredictorKind::Linear => {
                let mut y = self.output_bias();
                for (g, &x) in window.iter().enumerate() {
                    if self.active[g] {
                        y += self.params[g] * x;
                    }
                }
                y
            }
            PredictorKind::Mlp => {
                let hb = self.hidden_bias_offset();
                act.copy_from_slice(&self.params[hb..hb + h]);
                for (g, &x) in window.iter().enumerate() {
                    if !self.active[g] || x == 0.0 {
                        continue;
                    }
                    let col = &self.params[g * h..(g + 1) * h];
                    for (a, w) in act.iter_mut().zip(col) {
                        *a += w * x;
                    }
                }
                let out = &self.params[hb + h..hb + 2 * h];
                let mut y = self.output_bias();
                for (a, v) in act.iter_mut().zip(out) {
                    *a = a.tanh();
                    y += v * *a;
                }
                y
            }
        }
    }

    /// Mean squared error over `batch` plus `l1_group` times the sum of group
    /// scores, with the gradient in parameter layout. Inactive groups get a
    /// zero gradient.
    pub fn loss_and_grad(&self, batch: Batch<'_>, l1_group: f64) -> Result<(LossParts, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if batch.design.width() != self.groups.len() {
            return Err(Error::ShapeMismatch(format!(
                "design width {} differs from {} groups",
                batch.design.width(),
                self.groups.len()
            )));
        }
        let n = batch.len();
        let h = self.hidden;
        let hb = self.hidden_bias_offset();
        let mut grad = vec![0.0; self.params.len()];
        let mut act = vec![0.0; h];
        let mut delta = vec![0.0; h];
        let mut sse = 0.0;
        let scale = 2.0 / n as f64;
        for k in 0..n {
            let row = batch.row_index(k);
            let x = batch.design.window(row);
            let y = self.predict(x, &mut act);
            let r = y - batch.design.target(row);
            sse += r * r;
            let dy = scale * r;
            match self.kind {
                PredictorKind::Linear => {
                    for (g, &xg) in x.iter().enumerate() {
                        if self.active[g] {
                            grad[g] += dy * xg;
                        }
                    }
                    grad[hb] += dy;
                }
                PredictorKind::Mlp => {
                    let out = &self.params[hb + h..hb + 2 * h];
                    for i in 0..h {
                        grad[hb + h + i] += dy * act[i];
                        delta[i] = dy * out[i] * (1.0 - act[i] * act[i]);
                        grad[hb + i] += delta[i];
                    }
                    grad[hb + 2 * h] += dy;
                    for (g, &xg) in x.iter().enumerate() {
                        if !self.active[g] || xg == 0.0 {
                            continue;
                        }
                        for (gw, d) in grad[g * h..(g + 1) * h].iter_mut().zip(&delta) {
                            *gw += d * xg;
                        }
                    }
                }
            }
        }
        let mse = sse / n as f64;
        let mut penalty = 0.0;
        if l1_group != 0.0 {
            for g in 0..self.groups.len() {
                if self.active[g] {
                    penalty += l1_group * norm(self.column(g));
                    self.add_group_norm_grad(&mut grad, g, l1_group);
                }
            }
        }
        if !mse.is_finite() {
            return Err(Error::Diverged {
                node: self.target,
                epoch: 0,
                detail: "non-finite loss".into(),
            });
        }
        Ok((
            LossParts {
                loss: mse + penalty,
                mse,
                penalty,
            },
            grad,
        ))
    }

    /// Adds `coeff * d||column_g|| / d(column_g)` (smoothed) into `grad`.
    pub fn add_group_norm_grad(&self, grad: &mut [f64], group: usize, coeff: f64) {
        if !self.active[group] || coeff == 0.0 {
            return;
        }
        let range = self.column_range(group);
        let col = &self.params[range.clone()];
        let denom = norm(col) + GROUP_NORM_EPS;
        for (gw, w) in grad[range].iter_mut().zip(col) {
            *gw += coeff * w / denom;
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::ShapeMismatch(format!(
            "params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}
