//! `sc3d`: generate benchmark data, discover graphs, evaluate them, and run
//! sweeps, ablations and TVSEM tracking.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sc3d::eval::{graph_metrics, MetricsReport};
use sc3d::io::{load_dataset, load_graph, save_dataset, save_graph, write_atomic};
use sc3d::pipeline::{
    ablate, resolve_jobs, results_csv, run_pipeline, sweep, track, write_run_dir, CellResult, ExperimentConfig,
    GeneratorSpec, SweepKind, Variant,
};

#[derive(Parser)]
#[command(name = "sc3d", version, about = "Two-stage differentiable causal discovery for time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a benchmark dataset and its ground truth.
    Generate(GenerateArgs),
    /// Run both stages on a dataset CSV.
    Discover(DiscoverArgs),
    /// Score an estimated graph against a truth graph.
    Evaluate(EvaluateArgs),
    /// Dimension or lag-order sweep over the SVAR generator.
    Sweep(SweepArgs),
    /// Ablation variants over seeds.
    Ablate(AblateArgs),
    /// Windowed direction tracking on TVSEM data.
    Track(TrackArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum System {
    Svar,
    Lorenz96,
    Tvsem,
    Nc8,
}

impl System {
    fn tag(self) -> &'static str {
        match self {
            System::Svar => "svar",
            System::Lorenz96 => "lorenz96",
            System::Tvsem => "tvsem",
            System::Nc8 => "nc8",
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display())),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

/// Generator overrides shared by every subcommand that simulates data.
#[derive(Args, Default)]
struct GeneratorArgs {
    #[arg(long)]
    system: Option<System>,
    /// Number of variables.
    #[arg(long = "d")]
    dim: Option<usize>,
    /// Lag order (also used for discovery).
    #[arg(long = "L")]
    lag_order: Option<usize>,
    /// Time steps per trajectory.
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// Number of trajectories.
    #[arg(long = "N")]
    trajectories: Option<usize>,
    /// SVAR nonlinearity: linear or tanh.
    #[arg(long)]
    nonlinearity: Option<String>,
}

impl GeneratorArgs {
    fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        let mut spec = serde_json::to_value(&config.generator)?;
        if let Some(system) = self.system {
            if spec["system"] != system.tag() {
                spec = json!({ "system": system.tag() });
            }
        }
        let fields = [
            ("dim", self.dim.map(Value::from)),
            ("lag_order", self.lag_order.map(Value::from)),
            ("horizon", self.horizon.map(Value::from)),
            ("trajectories", self.trajectories.map(Value::from)),
            ("nonlinearity", self.nonlinearity.clone().map(Value::from)),
        ];
        for (key, value) in fields {
            if let Some(v) = value {
                spec[key] = v;
            }
        }
        // nc8 and tvsem fix their lag structure, so --L only reaches the generator for svar.
        if spec["system"] != "svar" {
            if let Some(obj) = spec.as_object_mut() {
                obj.remove("lag_order");
            }
        }
        config.generator = serde_json::from_value(spec).context("generator flags do not fit this system")?;
        if let Some(l) = self.lag_order {
            config.lag_order = l;
        }
        Ok(())
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth graph JSON path.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct DiscoverArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "L")]
    lag_order: Option<usize>,
    /// Learn the instantaneous block.
    #[arg(long, conflicts_with = "no_instantaneous")]
    instantaneous: bool,
    /// Lagged edges only.
    #[arg(long)]
    no_instantaneous: bool,
    /// Ablation variant to apply on top of the config.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    /// Estimated graph JSON.
    #[arg(long)]
    out: PathBuf,
    /// Stage-2 training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Truth graph JSON; when given, metrics are computed.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Also write Stage-1 scores and the masks.
    #[arg(long)]
    keep_intermediate: bool,
    /// Stage-1 score JSON (default: next to --out).
    #[arg(long)]
    scores_out: Option<PathBuf>,
    /// Directory receiving the echoed config and every artifact.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Metrics CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep the k strongest incoming lagged edges per target for top-k SHD.
    #[arg(long)]
    top_k: Option<usize>,
    /// Magnitude above which an estimated entry counts as an edge.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Number of seeds (0..n); overrides the config's seed list.
    #[arg(long)]
    seeds: Option<u64>,
    /// Concurrent cells.
    #[arg(long, env = "SC3D_JOBS")]
    jobs: Option<usize>,
    /// Results CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-cell run directories go here.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    keep_intermediate: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = self.config.load()?;
        self.generator.apply(&mut c)?;
        if let Some(n) = self.seeds {
            c.seeds = (0..n).collect();
        }
        if self.output_dir.is_some() {
            c.output_dir = self.output_dir.clone();
        }
        c.keep_intermediate |= self.keep_intermediate;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SweepArgs {
    /// `d` (dimension) or `L` (lag order).
    #[arg(long)]
    kind: SweepKind,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_value = "full,linear,no-freeze,no-2cycle,no-stage1")]
    variants: Vec<Variant>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Only `tvsem` carries regimes.
    #[arg(long, default_value = "tvsem")]
    system: System,
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    window: usize,
    #[arg(long, default_value_t = 25)]
    stride: usize,
    /// Per-window scores CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut config = args.config.load()?;
    args.generator.apply(&mut config)?;
    let spec = config.generator.with_seed(args.seed);
    let ds = spec.generate()?;
    save_dataset(&ds, &args.out)?;
    if let Some(path) = &args.truth_out {
        let truth = ds.truth().context("generator attached no truth")?;
        save_graph(truth, None, path)?;
    }
    eprintln!(
        "wrote {} ({} x {} x {})",
        args.out.display(),
        ds.num_trajectories(),
        ds.horizon(),
        ds.dim()
    );
    Ok(())
}

fn discover(args: DiscoverArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(l) = args.lag_order {
        config.lag_order = l;
    }
    if args.instantaneous {
        config.instantaneous = true;
    }
    if args.no_instantaneous {
        config.instantaneous = false;
    }
    if let Some(v) = args.variant {
        v.apply(&mut config);
    }
    if let Some(seed) = args.seed {
        config = config.with_seed(seed);
    }
    config.keep_intermediate |= args.keep_intermediate;
    config.validate()?;

    let mut ds = load_dataset(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    if let Some(path) = &args.truth {
        let (truth, _) = load_graph(path).with_context(|| format!("reading {}", path.display()))?;
        ds = ds.with_truth(truth)?;
    }
    let out = run_pipeline(&ds, &config)?;
    save_graph(&out.graph, None, &args.out)?;
    if let Some(log) = &args.log {
        write_atomic(log, out.stage2.log.to_csv().as_bytes())?;
    }
    if config.keep_intermediate {
        save_graph(&out.graph, Some(&out.masks), &sibling(&args.out, "masks.json"))?;
        if let Some(s1) = &out.stage1 {
            let path = args.scores_out.clone().unwrap_or_else(|| sibling(&args.out, "scores.json"));
            s1.scores.save(&path)?;
        }
    }
    if let Some(m) = &out.metrics {
        match &args.metrics_out {
            Some(p) => write_atomic(p, m.to_csv().as_bytes())?,
            None => eprint!("{}", m.to_csv()),
        }
    }
    if let Some(dir) = &args.run_dir {
        write_run_dir(dir, &config, &ds, &out)?;
    }
    match out.stage2.freeze.epoch_frozen {
        Some(e) => eprintln!("penalties frozen at epoch {e}"),
        None if config.instantaneous => eprintln!("penalty freezing never triggered"),
        None => {}
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut options = args.config.load()?.metrics;
    if args.top_k.is_some() {
        options.top_k = args.top_k;
    }
    if let Some(t) = args.tol {
        options.tol = t;
    }
    let (est, _) = load_graph(&args.est).with_context(|| format!("reading {}", args.est.display()))?;
    let (truth, _) = load_graph(&args.truth).with_context(|| format!("reading {}", args.truth.display()))?;
    let report: MetricsReport = graph_metrics(&est, &truth, &options)?;
    emit(args.out.as_deref(), &report.to_csv())
}

/// Writes the results table and reports whether every cell completed.
fn finish_cells(label: &str, cells: &[CellResult], out: Option<&Path>) -> Result<bool> {
    emit(out, &results_csv(label, cells)?)?;
    let failed: Vec<&CellResult> = cells.iter().filter(|c| c.outcome.is_err()).collect();
    for c in &failed {
        if let Err(e) = &c.outcome {
            eprintln!("{label}={} seed {}: {e}", c.label, c.seed);
        }
    }
    Ok(failed.is_empty())
}

fn run_sweep(args: SweepArgs) -> Result<bool> {
    let config = args.run.config()?;
    let cells = sweep(args.kind, &args.values, &config, resolve_jobs(args.run.jobs))?;
    let label = match args.kind {
        SweepKind::Dim => "d",
        SweepKind::Lag => "L",
    };
    finish_cells(label, &cells, args.run.out.as_deref())
}

fn run_ablate(args: AblateArgs) -> Result<bool> {
    let config = args.run.config()?;
    let cells = ablate(&args.variants, &config, resolve_jobs(args.run.jobs))?;
    finish_cells("variant", &cells, args.run.out.as_deref())
}

fn run_track(args: TrackArgs) -> Result<()> {
    if !matches!(args.system, System::Tvsem) {
        bail!("tracking needs regime boundaries, which only tvsem provides");
    }
    let mut config = args.config.load()?;
    let mut spec = match &config.generator {
        GeneratorSpec::Tvsem(s) => s.clone(),
        _ => Default::default(),
    };
    if let Some(t) = args.horizon {
        spec.horizon = t;
    }
    spec.seed = args.seed;
    config.generator = GeneratorSpec::Tvsem(spec);
    let config = config.with_seed(args.seed);
    let ds = config.generator.generate()?;
    let t = track(&ds, &config, args.window, args.stride)?;
    let boundaries = ds.regime_boundaries().unwrap_or(&[]);
    eprintln!(
        "directional accuracy {:.3}; flips at boundaries: {}",
        t.accuracy,
        t.flips_at_boundaries(boundaries, args.window, args.stride, 1)
    );
    emit(args.out.as_deref(), &t.to_csv())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a).map(|_| true),
        Command::Discover(a) => discover(a).map(|_| true),
        Command::Evaluate(a) => evaluate(a).map(|_| true),
        Command::Sweep(a) => run_sweep(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Track(a) => run_track(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
