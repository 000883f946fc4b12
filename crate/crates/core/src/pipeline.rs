//! End-to-end experiment driver: generate, screen, refine, evaluate, plus
//! sweeps, ablations and windowed tracking.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    simulate_lorenz96, simulate_nc8, simulate_svar, simulate_tvsem, tvsem_dominant, Lorenz96Spec, SvarSpec, TvsemSpec,
};
use crate::dataset::{Scaling, Standardizer, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::eval::{graph_metrics, windowed_tracking, MetricOptions, MetricsReport, Tracking};
use crate::graph::{DynamicGraph, EdgeMasks};
use crate::io::{dataset_to_csv, graph_to_json, write_atomic};
use crate::predictor::PredictorKind;
use crate::stage1::{build_design, run_stage1, Stage1Config, Stage1Output};
use crate::stage2::{run_stage2, Stage2Config, Stage2Output};

pub const JOBS_ENV: &str = "SC3D_JOBS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nc8Spec {
    pub horizon: usize,
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for Nc8Spec {
    fn default() -> Self {
        Self {
            horizon: 200,
            trajectories: 1,
            seed: 0,
        }
    }
}

/// Which benchmark to simulate, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "lowercase")]
pub enum GeneratorSpec {
    Svar(SvarSpec),
    Lorenz96(Lorenz96Spec),
    Tvsem(TvsemSpec),
    Nc8(Nc8Spec),
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::Svar(SvarSpec::default())
    }
}

impl GeneratorSpec {
    /// Copy with every seed (structure and noise) set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            GeneratorSpec::Svar(s) => {
                s.seed = seed;
                s.structure_seed = seed;
            }
            GeneratorSpec::Lorenz96(s) => s.seed = seed,
            GeneratorSpec::Tvsem(s) => s.seed = seed,
            GeneratorSpec::Nc8(s) => s.seed = seed,
        }
        out
    }

    pub fn generate(&self) -> Result<TimeSeriesDataset> {
        match self {
            GeneratorSpec::Svar(s) => simulate_svar(s),
            GeneratorSpec::Lorenz96(s) => simulate_lorenz96(s),
            GeneratorSpec::Tvsem(s) => simulate_tvsem(s),
            GeneratorSpec::Nc8(s) => simulate_nc8(s.horizon, s.trajectories, s.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    pub lag_order: usize,
    pub instantaneous: bool,
    /// Rescaling applied before both stages.
    pub scaling: Scaling,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub metrics: MetricOptions,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub keep_intermediate: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorSpec::default(),
            lag_order: 3,
            instantaneous: true,
            scaling: Scaling::Pooled,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            metrics: MetricOptions::default(),
            seeds: (0..5).collect(),
            output_dir: None,
            keep_intermediate: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Copy whose generator and both training stages use `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.generator = self.generator.with_seed(seed);
        out.stage1.seed = seed;
        out.stage2.seed = seed;
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.lag_order == 0 {
            return Err(Error::invalid("lag order must be >= 1"));
        }
        self.stage1.validate()?;
        self.stage2.validate()
    }
}

/// Ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    Linear,
    NoFreeze,
    No2cycle,
    NoStage1,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::Linear,
        Variant::NoFreeze,
        Variant::No2cycle,
        Variant::NoStage1,
    ];

    pub fn apply(self, config: &mut ExperimentConfig) {
        match self {
            Variant::Full => {}
            Variant::Linear => {
                config.stage1.predictor = PredictorKind::Linear;
                config.stage2.linear_predictor = true;
            }
            Variant::NoFreeze => config.stage2.freeze_enabled = false,
            Variant::No2cycle => config.stage2.two_cycle_enabled = false,
            Variant::NoStage1 => config.stage2.use_stage1_masks = false,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Linear => "linear",
            Variant::NoFreeze => "no-freeze",
            Variant::No2cycle => "no-2cycle",
            Variant::NoStage1 => "no-stage1",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub graph: DynamicGraph,
    pub masks: EdgeMasks,
    pub stage1: Option<Stage1Output>,
    pub stage2: Stage2Output,
    pub metrics: Option<MetricsReport>,
}

/// Screens, refines and (when `ds` carries truth) evaluates.
pub fn run_pipeline(ds: &TimeSeriesDataset, config: &ExperimentConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let data = Standardizer::fit_with(ds, config.scaling).apply(ds);
    let (masks, stage1) = if config.stage2.use_stage1_masks {
        let out = run_stage1(&data, config.lag_order, config.instantaneous, &config.stage1)
            .map_err(|e| Error::in_stage("stage 1", e))?;
        (out.masks.clone(), Some(out))
    } else {
        (EdgeMasks::all(ds.dim(), config.lag_order, config.instantaneous), None)
    };
    let designs =
        build_design(&data, config.lag_order, config.instantaneous).map_err(|e| Error::in_stage("stage 2", e))?;
    let init = stage1.as_ref().map(|s| s.predictors.as_slice());
    let mut stage2_config = config.stage2.clone();
    stage2_config.hidden_width = config.stage1.hidden_width;
    let stage2 = run_stage2(&designs, &masks, init, config.instantaneous, &stage2_config)
        .map_err(|e| Error::in_stage("stage 2", e))?;
    let graph = stage2.graph.clone();
    let metrics = match ds.truth() {
        Some(truth) => {
            Some(graph_metrics(&graph, truth, &config.metrics).map_err(|e| Error::in_stage("evaluation", e))?)
        }
        None => None,
    };
    Ok(PipelineOutput {
        graph,
        masks,
        stage1,
        stage2,
        metrics,
    })
}

/// Writes the echoed config, dataset, truth, graph, metrics and training
/// log into `dir` (plus scores and masks when `keep_intermediate`).
pub fn write_run_dir(dir: &Path, config: &ExperimentConfig, ds: &TimeSeriesDataset, out: &PipelineOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("config.json"), config.to_json()?.as_bytes())?;
    write_atomic(&dir.join("data.csv"), dataset_to_csv(ds).as_bytes())?;
    if let Some(truth) = ds.truth() {
        write_atomic(&dir.join("truth.json"), graph_to_json(truth, None)?.as_bytes())?;
    }
    write_atomic(&dir.join("graph.json"), graph_to_json(&out.graph, None)?.as_bytes())?;
    if let Some(m) = &out.metrics {
        write_atomic(&dir.join("metrics.csv"), m.to_csv().as_bytes())?;
    }
    write_atomic(&dir.join("train_log.csv"), out.stage2.log.to_csv().as_bytes())?;
    if config.keep_intermediate {
        write_atomic(&dir.join("masks.json"), graph_to_json(&out.graph, Some(&out.masks))?.as_bytes())?;
        if let Some(s1) = &out.stage1 {
            write_atomic(&dir.join("scores.json"), s1.scores.to_json()?.as_bytes())?;
        }
    }
    Ok(())
}

/// Worker count: the explicit value, else `SC3D_JOBS`, else all cores.
pub fn resolve_jobs(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(JOBS_ENV).ok().and_then(|v| v.parse().ok()))
        .filter(|&j| j > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    #[serde(rename = "d")]
    Dim,
    #[serde(rename = "L")]
    Lag,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d" => Ok(SweepKind::Dim),
            "L" | "l" => Ok(SweepKind::Lag),
            other => Err(Error::invalid(format!("unknown sweep kind {other:?}, expected d or L"))),
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKind::Dim => "d",
            SweepKind::Lag => "L",
        })
    }
}

/// One (setting, seed) cell of a sweep or ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub label: String,
    pub seed: u64,
    pub outcome: std::result::Result<MetricsReport, String>,
}

const METRIC_COLUMNS: [&str; 9] = [
    "shd_a",
    "shd_b",
    "shd_total",
    "f1_b",
    "auroc_a",
    "auprc_a",
    "auroc_b",
    "auprc_b",
    "topk_shd_a",
];

fn metric_values(m: &MetricsReport) -> [Option<f64>; 9] {
    [
        Some(m.shd_per_lag.iter().sum::<usize>() as f64),
        Some(m.shd_b as f64),
        Some(m.shd_total as f64),
        Some(m.f1_b),
        m.auroc_a,
        m.auprc_a,
        m.auroc_b,
        m.auprc_b,
        m.topk_shd_a.map(|v| v as f64),
    ]
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, sd))
}

/// CSV with one row per cell and one summary row (mean plus `_sd` columns)
/// per label, in first-appearance order.
pub fn results_csv(label_column: &str, cells: &[CellResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![label_column.to_string(), "seed".into(), "status".into()];
    header.extend(METRIC_COLUMNS.iter().map(|c| c.to_string()));
    header.extend(METRIC_COLUMNS.iter().map(|c| format!("{c}_sd")));
    let csv_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in cells {
        let mut row = vec![c.label.clone(), c.seed.to_string()];
        match &c.outcome {
            Ok(m) => {
                row.push("ok".into());
                row.extend(metric_values(m).iter().map(|v| cell(*v)));
            }
            Err(msg) => {
                row.push(format!("error: {msg}"));
                row.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len()));
            }
        }
        row.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len()));
        w.write_record(&row).map_err(csv_err)?;
    }
    let mut labels: Vec<&str> = Vec::new();
    for c in cells {
        if !labels.contains(&c.label.as_str()) {
            labels.push(&c.label);
        }
    }
    for label in labels {
        let reports: Vec<&MetricsReport> = cells
            .iter()
            .filter(|c| c.label == label)
            .filter_map(|c| c.outcome.as_ref().ok())
            .collect();
        let stats: Vec<Option<(f64, f64)>> = (0..METRIC_COLUMNS.len())
            .map(|k| {
                let vals: Vec<f64> = reports.iter().filter_map(|m| metric_values(m)[k]).collect();
                mean_sd(&vals)
            })
            .collect();
        let mut row = vec![label.to_string(), "summary".into(), format!("n={}", reports.len())];
        row.extend(stats.iter().map(|s| cell(s.map(|x| x.0))));
        row.extend(stats.iter().map(|s| cell(s.map(|x| x.1))));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv write failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

fn run_cell(config: &ExperimentConfig, label: String, seed: u64) -> CellResult {
    let cfg = config.with_seed(seed);
    let outcome = cfg
        .generator
        .generate()
        .map_err(|e| Error::in_stage("generation", e))
        .and_then(|ds| {
            let out = run_pipeline(&ds, &cfg)?;
            if let Some(dir) = &cfg.output_dir {
                write_run_dir(&dir.join(format!("{label}_seed{seed}")), &cfg, &ds, &out)?;
            }
            out.metrics
                .ok_or_else(|| Error::invalid("generated dataset carries no truth"))
        })
        .map_err(|e| e.to_string());
    CellResult { label, seed, outcome }
}

fn run_cells(cells: Vec<(ExperimentConfig, String, u64)>, jobs: usize) -> Result<Vec<CellResult>> {
    with_jobs(jobs, || {
        cells
            .into_par_iter()
            .map(|(cfg, label, seed)| run_cell(&cfg, label, seed))
            .collect()
    })
}

/// Runs every `(value, seed)` cell of a dimension or lag sweep over the SVAR
/// generator. Failed cells are recorded and the sweep continues.
pub fn sweep(kind: SweepKind, values: &[usize], base: &ExperimentConfig, jobs: usize) -> Result<Vec<CellResult>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let GeneratorSpec::Svar(spec) = &base.generator else {
        return Err(Error::invalid("sweeps run over the svar generator"));
    };
    let mut cells = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        let mut s = spec.clone();
        match kind {
            SweepKind::Dim => s.dim = v,
            SweepKind::Lag => {
                s.lag_order = v;
                cfg.lag_order = v;
            }
        }
        cfg.generator = GeneratorSpec::Svar(s);
        for &seed in &base.seeds {
            cells.push((cfg.clone(), v.to_string(), seed));
        }
    }
    run_cells(cells, jobs)
}

/// Runs each ablation variant for every seed of `base`.
pub fn ablate(variants: &[Variant], base: &ExperimentConfig, jobs: usize) -> Result<Vec<CellResult>> {
    if variants.is_empty() {
        return Err(Error::invalid("ablation needs at least one variant"));
    }
    let mut cells = Vec::new();
    for &v in variants {
        let mut cfg = base.clone();
        v.apply(&mut cfg);
        for &seed in &base.seeds {
            cells.push((cfg.clone(), v.to_string(), seed));
        }
    }
    run_cells(cells, jobs)
}

/// Windowed lag-1 direction tracking on a TVSEM dataset: every window is
/// discovered with `config` forced to `L = 1` and no instantaneous block.
pub fn track(ds: &TimeSeriesDataset, config: &ExperimentConfig, window: usize, stride: usize) -> Result<Tracking> {
    let mut cfg = config.clone();
    cfg.lag_order = 1;
    cfg.instantaneous = false;
    windowed_tracking(
        ds,
        window,
        stride,
        |w| run_pipeline(w, &cfg).map(|o| o.graph),
        tvsem_dominant,
    )
}
