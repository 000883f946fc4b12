//! Structural and ranking metrics, top-k evaluation and windowed direction
//! tracking.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Direction;
use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, Support};

pub const DEFAULT_TOL: f64 = 1e-8;

/// Group score above which an estimated edge counts as present when
/// structure metrics are computed on discovered graphs.
pub const DEFAULT_EDGE_TOL: f64 = 0.08;

/// Ordered-pair disagreement count. A reversed edge counts twice.
pub fn shd(est: &Support, truth: &Support) -> Result<usize> {
    if est.shape() != truth.shape() {
        return Err(Error::ShapeMismatch(format!(
            "estimate is {:?}, truth is {:?}",
            est.shape(),
            truth.shape()
        )));
    }
    Ok(est.iter().zip(truth.iter()).filter(|(a, b)| a != b).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum BinarizeRule {
    Tol(f64),
    TopK(usize),
}

impl Default for BinarizeRule {
    fn default() -> Self {
        BinarizeRule::Tol(DEFAULT_TOL)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub lags: Vec<Support>,
    pub instant: Support,
}

pub fn binarize(g: &DynamicGraph, rule: BinarizeRule) -> Binarized {
    let tol_mask = |m: &DMatrix<f64>, tol: f64| m.map(|v| v.abs() > tol);
    match rule {
        BinarizeRule::Tol(tol) => Binarized {
            lags: g.lag_matrices().iter().map(|a| tol_mask(a, tol)).collect(),
            instant: tol_mask(g.instant_matrix(), tol),
        },
        BinarizeRule::TopK(k) => Binarized {
            lags: topk_mask(g, k),
            instant: tol_mask(g.instant_matrix(), DEFAULT_TOL),
        },
    }
}

/// `out[j, i] = max_l |A_l[j, i]|`.
pub fn aggregate_lag_scores(g: &DynamicGraph) -> DMatrix<f64> {
    let d = g.dim();
    let mut out = DMatrix::zeros(d, d);
    for a in g.lag_matrices() {
        out.zip_apply(a, |o: &mut f64, v: f64| *o = o.max(v.abs()));
    }
    out
}

fn check_labels(labels: &[bool], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative; ties count
/// one half.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_labels(labels, scores)?;
    let pos: Vec<f64> = labels.iter().zip(scores).filter(|(l, _)| **l).map(|(_, s)| *s).collect();
    let neg: Vec<f64> = labels.iter().zip(scores).filter(|(l, _)| !**l).map(|(_, s)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric(
            "AUROC needs at least one positive and one negative label".into(),
        ));
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Groups of `(score, label)` pairs with equal scores, descending.
fn tied_groups(labels: &[bool], scores: &[f64]) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups = Vec::new();
    let mut k = 0;
    while k < idx.len() {
        let s = scores[idx[k]];
        let (mut tp, mut fp) = (0, 0);
        while k < idx.len() && scores[idx[k]] == s {
            if labels[idx[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        groups.push((tp, fp));
    }
    groups
}

/// Trapezoidal integration of the ROC curve swept over distinct thresholds.
pub fn auroc_trapezoid(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_labels(labels, scores)?;
    let p = labels.iter().filter(|l| **l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs at least one positive and one negative label".into(),
        ));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    for (gtp, gfp) in tied_groups(labels, scores) {
        let (tp2, fp2) = (tp + gtp, fp + gfp);
        area += (fp2 - fp) as f64 * (tp + tp2) as f64 / 2.0;
        tp = tp2;
        fp = fp2;
    }
    Ok(area / (p * n) as f64)
}

/// `sum_k (R_k - R_{k-1}) P_k` over distinct descending thresholds.
pub fn auprc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_labels(labels, scores)?;
    let p = labels.iter().filter(|l| **l).count();
    if p == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive label".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    for (gtp, gfp) in tied_groups(labels, scores) {
        let recall_before = tp as f64 / p as f64;
        tp += gtp;
        fp += gfp;
        area += (tp as f64 / p as f64 - recall_before) * tp as f64 / (tp + fp) as f64;
    }
    Ok(area)
}

/// F1 of an estimated support. Both empty counts as a perfect score.
pub fn f1(est: &Support, truth: &Support) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::ShapeMismatch("F1 needs equal shapes".into()));
    }
    let tp = est.iter().zip(truth.iter()).filter(|(a, b)| **a && **b).count();
    let n_est = est.iter().filter(|v| **v).count();
    let n_truth = truth.iter().filter(|v| **v).count();
    if n_est + n_truth == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (n_est + n_truth) as f64)
}

/// Per target row, the `k` largest aggregated lag scores (ties to the lower
/// source index) mapped back to the lag holding the maximum.
pub fn topk_mask(g: &DynamicGraph, k: usize) -> Vec<Support> {
    let d = g.dim();
    let lags = g.lag_matrices();
    let agg = aggregate_lag_scores(g);
    let mut out = vec![Support::from_element(d, d, false); lags.len()];
    for j in 0..d {
        let mut row: Vec<usize> = (0..d).filter(|&i| agg[(j, i)] > 0.0).collect();
        row.sort_by(|&a, &b| agg[(j, b)].total_cmp(&agg[(j, a)]).then(a.cmp(&b)));
        for &i in row.iter().take(k) {
            let best = (0..lags.len())
                .max_by(|&x, &y| lags[x][(j, i)].abs().total_cmp(&lags[y][(j, i)].abs()).then(y.cmp(&x)))
                .expect("at least one lag");
            out[best][(j, i)] = true;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub tol: f64,
    pub top_k: Option<usize>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_EDGE_TOL,
            top_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub shd_per_lag: Vec<usize>,
    pub shd_b: usize,
    pub shd_total: usize,
    pub f1_b: f64,
    pub auroc_a: Option<f64>,
    pub auprc_a: Option<f64>,
    pub auroc_b: Option<f64>,
    pub auprc_b: Option<f64>,
    pub topk_shd_a: Option<usize>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Full report of `est` against `truth`. Lag orders are padded to the larger
/// of the two; an estimate without instantaneous output is scored with `B = 0`.
/// Ranking metrics that are undefined for the truth's label set are `None`.
pub fn graph_metrics(est: &DynamicGraph, truth: &DynamicGraph, options: &MetricOptions) -> Result<MetricsReport> {
    if est.dim() != truth.dim() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has d={}, truth has d={}",
            est.dim(),
            truth.dim()
        )));
    }
    let d = est.dim();
    let l = est.lag_order().max(truth.lag_order());
    let est = est.padded(l);
    let truth = truth.padded(l);
    let e = binarize(&est, BinarizeRule::Tol(options.tol));
    let t = binarize(&truth, BinarizeRule::Tol(0.0));

    let shd_per_lag = e
        .lags
        .iter()
        .zip(&t.lags)
        .map(|(a, b)| shd(a, b))
        .collect::<Result<Vec<_>>>()?;
    let shd_b = shd(&e.instant, &t.instant)?;
    let shd_total = shd_per_lag.iter().sum::<usize>() + shd_b;
    let f1_b = f1(&e.instant, &t.instant)?;

    let est_agg = aggregate_lag_scores(&est);
    let truth_agg = aggregate_lag_scores(&truth);
    let labels_a: Vec<bool> = truth_agg.iter().map(|v| *v > 0.0).collect();
    let scores_a: Vec<f64> = est_agg.iter().copied().collect();
    let auroc_a = defined(auroc(&labels_a, &scores_a))?;
    let auprc_a = defined(auprc(&labels_a, &scores_a))?;

    let (auroc_b, auprc_b) = if truth.instant_enabled() || est.instant_enabled() {
        let mut labels = Vec::with_capacity(d * d);
        let mut scores = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    labels.push(t.instant[(j, i)]);
                    scores.push(est.instant_matrix()[(j, i)].abs());
                }
            }
        }
        (defined(auroc(&labels, &scores))?, defined(auprc(&labels, &scores))?)
    } else {
        (None, None)
    };

    let topk_shd_a = match options.top_k {
        Some(k) => {
            let masks = topk_mask(&est, k);
            let mut total = 0;
            for (m, tl) in masks.iter().zip(&t.lags) {
                total += shd(m, tl)?;
            }
            Some(total)
        }
        None => None,
    };

    Ok(MetricsReport {
        shd_per_lag,
        shd_b,
        shd_total,
        f1_b,
        auroc_a,
        auprc_a,
        auroc_b,
        auprc_b,
        topk_shd_a,
    })
}

fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// Column names, with `shd_lag{l}` expanded for `lag_order` lags.
    pub fn csv_header(lag_order: usize) -> String {
        let mut cols: Vec<String> = (1..=lag_order).map(|l| format!("shd_lag{l}")).collect();
        cols.extend(
            [
                "shd_b",
                "shd_total",
                "f1_b",
                "auroc_a",
                "auprc_a",
                "auroc_b",
                "auprc_b",
                "topk_shd_a",
            ]
            .map(String::from),
        );
        cols.join(",")
    }

    pub fn csv_cells(&self) -> String {
        let mut cells: Vec<String> = self.shd_per_lag.iter().map(|v| v.to_string()).collect();
        cells.push(self.shd_b.to_string());
        cells.push(self.shd_total.to_string());
        cells.push(self.f1_b.to_string());
        cells.push(opt_cell(self.auroc_a));
        cells.push(opt_cell(self.auprc_a));
        cells.push(opt_cell(self.auroc_b));
        cells.push(opt_cell(self.auprc_b));
        cells.push(opt_cell(self.topk_shd_a));
        cells.join(",")
    }

    /// One-row metrics CSV with a header.
    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(self.shd_per_lag.len()), self.csv_cells())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowScore {
    pub window_start: usize,
    pub score_xy: f64,
    pub score_yx: f64,
    /// `None` when the window straddles a regime boundary.
    pub regime: Option<usize>,
}

impl WindowScore {
    pub fn direction(&self) -> Direction {
        if self.score_xy > self.score_yx {
            Direction::XToY
        } else {
            Direction::YToX
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracking {
    pub windows: Vec<WindowScore>,
    pub accuracy: f64,
}

impl Tracking {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_start,score_xy,score_yx,regime\n");
        for w in &self.windows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                w.window_start,
                w.score_xy,
                w.score_yx,
                opt_cell(w.regime)
            ));
        }
        out
    }

    /// Whether the dominant direction changes only near regime boundaries:
    /// exactly one change per boundary, each within `tolerance` windows of
    /// the window centred on it.
    pub fn flips_at_boundaries(&self, boundaries: &[usize], window: usize, stride: usize, tolerance: usize) -> bool {
        let flips: Vec<usize> = (1..self.windows.len())
            .filter(|&k| self.windows[k].direction() != self.windows[k - 1].direction())
            .collect();
        let first = self.windows.first().map_or(0, |w| w.window_start);
        let last = self.windows.last().map_or(0, |w| w.window_start + window);
        let inside: Vec<usize> = boundaries.iter().copied().filter(|&b| b > first && b < last).collect();
        if flips.len() != inside.len() {
            return false;
        }
        flips.iter().zip(&inside).all(|(&k, &b)| {
            let centred = ((b as f64 - window as f64 / 2.0 - first as f64) / stride as f64).round();
            (k as f64 - centred).abs() <= tolerance as f64
        })
    }
}

/// Slides windows of length `window` by `stride`, records both lag-1 scores
/// (`x -> y` is `A_1[1, 0]`) and scores each boundary-free window against
/// `dominant(regime)`.
pub fn windowed_tracking<F, D>(
    ds: &TimeSeriesDataset,
    window: usize,
    stride: usize,
    discover: F,
    dominant: D,
) -> Result<Tracking>
where
    F: Fn(&TimeSeriesDataset) -> Result<DynamicGraph> + Sync,
    D: Fn(usize) -> Direction,
{
    if ds.dim() != 2 {
        return Err(Error::invalid("direction tracking needs a two-variable dataset"));
    }
    if window == 0 || stride == 0 || window > ds.horizon() {
        return Err(Error::invalid(format!(
            "no complete window of length {window} in T={}",
            ds.horizon()
        )));
    }
    let boundaries = ds.regime_boundaries().unwrap_or(&[]).to_vec();
    let starts: Vec<usize> = (0..=ds.horizon() - window).step_by(stride).collect();
    let windows = starts
        .par_iter()
        .map(|&start| {
            let g = discover(&ds.window(start, window)?)?;
            let a = g.lag_matrix(1);
            let straddles = boundaries.iter().any(|&b| b > start && b < start + window);
            Ok(WindowScore {
                window_start: start,
                score_xy: a[(1, 0)].abs(),
                score_yx: a[(0, 1)].abs(),
                regime: (!straddles).then(|| boundaries.iter().filter(|&&b| b <= start).count()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scored: Vec<&WindowScore> = windows.iter().filter(|w| w.regime.is_some()).collect();
    if scored.is_empty() {
        return Err(Error::invalid("every window straddles a regime boundary"));
    }
    let correct = scored
        .iter()
        .filter(|w| w.direction() == dominant(w.regime.expect("filtered")))
        .count();
    Ok(Tracking {
        accuracy: correct as f64 / scored.len() as f64,
        windows,
    })
}
