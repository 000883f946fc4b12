//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line reaches stdout. The process
//! exits 0 whatever the verdicts; the lines themselves are the report.

use std::time::Instant;

use nalgebra::DMatrix;
use sc3d::acyclic::{extract_dag, spectral_penalty, two_cycle_penalty, unroll_graph};
use sc3d::datagen::{simulate_svar, simulate_tvsem, Lorenz96Spec, Nonlinearity, SvarSpec, TvsemSpec};
use sc3d::eval::{auroc, auroc_trapezoid, MetricsReport};
use sc3d::graph::{is_acyclic, Support};
use sc3d::io::graph_to_json;
use sc3d::pipeline::{
    ablate, resolve_jobs, run_pipeline, track, CellResult, ExperimentConfig, GeneratorSpec, Nc8Spec, Variant,
};
use sc3d::predictor::{window_groups, Batch, Design, NodePredictor, PredictorKind};
use sc3d::stage1::{run_stage1, Stage1Config};
use sc3d::{DynamicGraph, Rng, Scaling, Standardizer};

struct Verdict {
    id: usize,
    pass: bool,
    detail: String,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn reports(cells: &[CellResult], label: &str) -> Result<Vec<MetricsReport>, String> {
    cells
        .iter()
        .filter(|c| c.label == label)
        .map(|c| c.outcome.clone().map_err(|e| format!("seed {}: {e}", c.seed)))
        .collect()
}

fn collect(reps: &[MetricsReport], f: impl Fn(&MetricsReport) -> Option<f64>) -> Vec<f64> {
    reps.iter().filter_map(f).collect()
}

fn svar_config(dim: usize) -> ExperimentConfig {
    ExperimentConfig {
        generator: GeneratorSpec::Svar(SvarSpec {
            dim,
            lag_order: 3,
            horizon: 200,
            nonlinearity: Nonlinearity::Tanh,
            ..SvarSpec::default()
        }),
        lag_order: 3,
        instantaneous: true,
        ..ExperimentConfig::default()
    }
}

fn full_runs(config: &ExperimentConfig) -> Result<Vec<MetricsReport>, String> {
    let cells = ablate(&[Variant::Full], config, resolve_jobs(None)).map_err(|e| e.to_string())?;
    reports(&cells, "full")
}

fn ranking_d30() -> Verdict {
    let run = || -> Result<(bool, String), String> {
        let reps = full_runs(&svar_config(30))?;
        let a = mean(&collect(&reps, |m| m.auroc_a));
        let pa = mean(&collect(&reps, |m| m.auprc_a));
        let b = mean(&collect(&reps, |m| m.auroc_b));
        let pb = mean(&collect(&reps, |m| m.auprc_b));
        let pass = a >= 0.83 && pa >= 0.68 && b >= 0.72 && pb >= 0.62;
        Ok((pass, format!("AUROC_A {a:.3} AUPRC_A {pa:.3} AUROC_B {b:.3} AUPRC_B {pb:.3}")))
    };
    verdict(1, run)
}

fn lorenz96() -> Verdict {
    let run = || -> Result<(bool, String), String> {
        let mut config = ExperimentConfig {
            generator: GeneratorSpec::Lorenz96(Lorenz96Spec {
                dim: 20,
                horizon: 200,
                ..Lorenz96Spec::default()
            }),
            lag_order: 1,
            instantaneous: false,
            ..ExperimentConfig::default()
        };
        config.metrics.top_k = Some(3);
        let reps = full_runs(&config)?;
        let shd = mean(&collect(&reps, |m| m.topk_shd_a.map(|v| v as f64)));
        let a = mean(&collect(&reps, |m| m.auroc_a));
        Ok((shd <= 55.0 && a >= 0.78, format!("top-3 SHD_A {shd:.1} AUROC_A {a:.3}")))
    };
    verdict(2, run)
}

fn nc8() -> Verdict {
    let run = || -> Result<(bool, String), String> {
        let config = ExperimentConfig {
            generator: GeneratorSpec::Nc8(Nc8Spec::default()),
            lag_order: 4,
            instantaneous: false,
            ..ExperimentConfig::default()
        };
        let reps = full_runs(&config)?;
        let a = mean(&collect(&reps, |m| m.auroc_a));
        let pa = mean(&collect(&reps, |m| m.auprc_a));
        Ok((a >= 0.80 && pa >= 0.72, format!("AUROC_A {a:.3} AUPRC_A {pa:.3}")))
    };
    verdict(3, run)
}

fn ablation_direction() -> Verdict {
    let run = || -> Result<(bool, String), String> {
        let cells = ablate(&[Variant::Full, Variant::NoStage1], &svar_config(20), resolve_jobs(None))
            .map_err(|e| e.to_string())?;
        let full = reports(&cells, "full")?;
        let bare = reports(&cells, "no-stage1")?;
        let shd_full = median(&collect(&full, |m| Some(m.shd_total as f64)));
        let shd_bare = median(&collect(&bare, |m| Some(m.shd_total as f64)));
        let f1_full = median(&collect(&full, |m| Some(m.f1_b)));
        let f1_bare = median(&collect(&bare, |m| Some(m.f1_b)));
        let pass = shd_bare >= 3.0 * shd_full && f1_full >= f1_bare + 0.2;
        Ok((
            pass,
            format!("median SHD_total {shd_full} vs {shd_bare}, F1_B {f1_full:.3} vs {f1_bare:.3}"),
        ))
    };
    verdict(4, run)
}

/// Stage-1 recall of true lagged and instantaneous parents over the first 20
/// (seed, node) pairs.
fn screening_recall() -> Verdict {
    let run = || -> Result<(bool, String), String> {
        let d = 6;
        let (mut kept, mut total, mut trials) = (0usize, 0usize, 0usize);
        let (mut lag_kept, mut lag_total) = (0usize, 0usize);
        'outer: for seed in 0u64.. {
            let spec = SvarSpec {
                dim: d,
                lag_order: 2,
                horizon: 400,
                seed,
                structure_seed: seed,
                ..SvarSpec::default()
            };
            let ds = simulate_svar(&spec).map_err(|e| e.to_string())?;
            let data = Standardizer::fit_with(&ds, Scaling::Pooled).apply(&ds);
            let config = Stage1Config {
                seed,
                ..Stage1Config::default()
            };
            let out = run_stage1(&data, 2, true, &config).map_err(|e| e.to_string())?;
            let truth = ds.truth().ok_or("generator attached no truth")?;
            for j in 0..d {
                if trials == 20 {
                    break 'outer;
                }
                trials += 1;
                for i in 0..d {
                    for lag in 1..=2 {
                        if truth.lag_matrix(lag)[(j, i)] != 0.0 {
                            total += 1;
                            lag_total += 1;
                            if out.masks.lag_allowed(lag, j, i) {
                                kept += 1;
                                lag_kept += 1;
                            }
                        }
                    }
                    if i != j && truth.instant_matrix()[(j, i)] != 0.0 {
                        total += 1;
                        kept += usize::from(out.masks.instant_allowed(j, i));
                    }
                }
            }
        }
        let recall = kept as f64 / total as f64;
        Ok((
            recall >= 0.95,
            format!("recall {recall:.3} ({kept}/{total}; lagged {lag_kept}/{lag_total})"),
        ))
    };
    verdict(5, run)
}

fn random_dag(rng: &mut Rng, d: usize, p: f64) -> DMatrix<f64> {
    let mut order: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut order);
    let mut b = DMatrix::zeros(d, d);
    for a in 0..d {
        for c in a + 1..d {
            if rng.bernoulli(p) {
                b[(order[c], order[a])] = rng.uniform_range(0.2, 1.0);
            }
        }
    }
    b
}

fn unrolled_acyclicity() -> Verdict {
    let mut rng = Rng::new(6);
    let (mut ok_acyclic, mut ok_cyclic) = (0, 0);
    let n = 200;
    for _ in 0..n {
        let d = 2 + rng.below(5);
        let l = 1 + rng.below(3);
        let window = 1 + rng.below(6);
        let lags: Vec<DMatrix<f64>> = (0..l)
            .map(|_| DMatrix::from_fn(d, d, |_, _| if rng.bernoulli(0.5) { rng.normal() } else { 0.0 }))
            .collect();
        let dag = random_dag(&mut rng, d, 0.5);
        let g = DynamicGraph::new(lags.clone(), dag.clone(), true).expect("valid graph");
        ok_acyclic += usize::from(unroll_graph(&g, window).topological_sort().is_acyclic());

        // Close a cycle through a random ordered vertex sequence.
        let len = 2 + rng.below(d - 1);
        let mut verts: Vec<usize> = (0..d).collect();
        rng.shuffle(&mut verts);
        let mut cyc = dag;
        for k in 0..len {
            cyc[(verts[(k + 1) % len], verts[k])] = 0.5;
        }
        let g = DynamicGraph::new(lags, cyc, true).expect("valid graph");
        ok_cyclic += usize::from(!unroll_graph(&g, window).topological_sort().is_acyclic());
    }
    Verdict {
        id: 6,
        pass: ok_acyclic == n && ok_cyclic == n,
        detail: format!("acyclic B {ok_acyclic}/{n} unrolled acyclic, cyclic B {ok_cyclic}/{n} unrolled cyclic"),
    }
}

fn perron_root(m: &DMatrix<f64>) -> (f64, f64) {
    let schur = m.clone().try_schur(1e-14, 100_000).expect("Schur iteration converges");
    let mut mods: Vec<f64> = schur.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    mods.sort_by(|a, b| b.total_cmp(a));
    (mods[0], mods.get(1).copied().unwrap_or(0.0))
}

/// Largest deviation between an analytic gradient and central differences.
fn fd_gap(params: &[f64], grad: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + h;
        let up = f(&p);
        p[k] = orig - h;
        let down = f(&p);
        p[k] = orig;
        worst = worst.max(((up - down) / (2.0 * h) - grad[k]).abs());
    }
    worst
}

fn dense_b(rng: &mut Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |j, i| if i == j { 0.0 } else { rng.uniform_range(-1.0, 1.0) })
}

/// The lexicographically largest acyclic edge set in rank order, found by
/// enumerating every subset.
fn best_acyclic_subset(b: &DMatrix<f64>) -> Support {
    let d = b.nrows();
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    for j in 0..d {
        for i in 0..d {
            if i != j && b[(j, i)] != 0.0 {
                ranked.push((b[(j, i)].abs(), j, i));
            }
        }
    }
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let e = ranked.len();
    let to_support = |mask: u32| {
        let mut s = Support::from_element(d, d, false);
        for (k, &(_, j, i)) in ranked.iter().enumerate() {
            if mask >> (e - 1 - k) & 1 == 1 {
                s[(j, i)] = true;
            }
        }
        s
    };
    // Bit e-1-k marks rank k, so the numerically largest acyclic mask is the
    // lexicographic maximum.
    let best = (0..1u32 << e).rev().find(|&m| is_acyclic(&to_support(m))).unwrap_or(0);
    to_support(best)
}

fn numerical_oracles() -> Verdict {
    let mut rng = Rng::new(7);
    let mut notes = Vec::new();
    let mut pass = true;

    let mut rho_err: f64 = 0.0;
    let mut tested = 0;
    while tested < 50 {
        let d = 2 + rng.below(9);
        let b = dense_b(&mut rng, d);
        let m = b.component_mul(&b);
        let (rho, second) = perron_root(&m);
        if second > 0.8 * rho {
            continue;
        }
        tested += 1;
        rho_err = rho_err.max((spectral_penalty(&b, 500, 1e-300).rho - rho).abs());
    }
    pass &= rho_err <= 1e-6;
    notes.push(format!("rho {rho_err:.1e}"));

    let (mut spec_err, mut cyc_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let d = 3 + rng.below(4);
        let b = dense_b(&mut rng, d);
        let flat: Vec<f64> = b.iter().copied().collect();
        let as_matrix = |p: &[f64]| DMatrix::from_column_slice(d, d, p);
        let s = spectral_penalty(&b, 2000, 1e-300);
        let g: Vec<f64> = s.grad_wrt_b.iter().copied().collect();
        spec_err = spec_err.max(fd_gap(&flat, &g, 1e-5, |p| spectral_penalty(&as_matrix(p), 2000, 1e-300).rho));
        let (_, cg) = two_cycle_penalty(&b);
        let g: Vec<f64> = cg.iter().copied().collect();
        cyc_err = cyc_err.max(fd_gap(&flat, &g, 1e-6, |p| two_cycle_penalty(&as_matrix(p)).0));
    }
    pass &= spec_err <= 1e-4 && cyc_err <= 1e-4;
    notes.push(format!("spectral grad {spec_err:.1e} two-cycle grad {cyc_err:.1e}"));

    let mut pred_err: f64 = 0.0;
    for kind in [PredictorKind::Mlp, PredictorKind::Linear] {
        let groups = window_groups(3, 2, 0, true);
        let width = groups.len();
        let n = 12;
        let windows: Vec<f64> = (0..n * width).map(|_| rng.normal()).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let design = Design::new(width, windows, targets).expect("consistent design");
        let p = NodePredictor::new(0, groups, kind, 5, &mut rng);
        let (_, grad) = p.loss_and_grad(Batch::all(&design), 0.15).expect("finite loss");
        pred_err = pred_err.max(fd_gap(p.params(), &grad, 1e-6, |theta| {
            let mut q = p.clone();
            q.params_mut().copy_from_slice(theta);
            q.loss_and_grad(Batch::all(&design), 0.15).expect("finite loss").0.loss
        }));
    }
    pass &= pred_err <= 1e-5;
    notes.push(format!("predictor grad {pred_err:.1e}"));

    let mut auc_err: f64 = 0.0;
    for _ in 0..50 {
        let n = 5 + rng.below(60);
        let labels: Vec<bool> = (0..n).map(|k| k == 0 || (k > 1 && rng.bernoulli(0.4))).collect();
        // Coarse scores force ties.
        let scores: Vec<f64> = (0..n).map(|_| rng.below(8) as f64 / 8.0).collect();
        let a = auroc(&labels, &scores).expect("both classes present");
        let t = auroc_trapezoid(&labels, &scores).expect("both classes present");
        auc_err = auc_err.max((a - t).abs());
    }
    pass &= auc_err <= 1e-12;
    notes.push(format!("auroc {auc_err:.1e}"));

    let mut dag_mismatch = 0;
    for _ in 0..200 {
        let d = 2 + rng.below(3);
        let b = DMatrix::from_fn(d, d, |j, i| {
            if i == j || rng.bernoulli(0.3) {
                0.0
            } else {
                // Few distinct magnitudes, so ties are common.
                (1 + rng.below(4)) as f64 * if rng.bernoulli(0.5) { 1.0 } else { -1.0 }
            }
        });
        dag_mismatch += usize::from(extract_dag(&b, None) != best_acyclic_subset(&b));
    }
    pass &= dag_mismatch == 0;
    notes.push(format!("extract_dag mismatches {dag_mismatch}/200"));

    Verdict {
        id: 7,
        pass,
        detail: notes.join(", "),
    }
}

fn tracking() -> Verdict {
    let run = || -> Result<(bool, String), String> {
        let mut pass = true;
        let mut notes = Vec::new();
        for seed in 0..3 {
            let ds = simulate_tvsem(&TvsemSpec {
                horizon: 800,
                seed,
                ..TvsemSpec::default()
            })
            .map_err(|e| e.to_string())?;
            let config = ExperimentConfig::default().with_seed(seed);
            let t = track(&ds, &config, 100, 25).map_err(|e| e.to_string())?;
            let boundaries = ds.regime_boundaries().unwrap_or(&[]);
            let flips = t.flips_at_boundaries(boundaries, 100, 25, 1);
            pass &= t.accuracy == 1.0 && flips;
            notes.push(format!("seed {seed}: accuracy {:.3} flips {}", t.accuracy, if flips { "ok" } else { "off" }));
        }
        Ok((pass, notes.join(", ")))
    };
    verdict(8, run)
}

fn determinism() -> Verdict {
    let run = || -> Result<(bool, String), String> {
        let nc8 = ExperimentConfig {
            generator: GeneratorSpec::Nc8(Nc8Spec::default()),
            lag_order: 4,
            instantaneous: false,
            ..ExperimentConfig::default()
        };
        let mut same = true;
        for (name, config) in [("svar d=10", svar_config(10)), ("nc8", nc8)] {
            let mut outputs = Vec::new();
            for jobs in [1, 3] {
                let cfg = config.with_seed(3);
                let ds = cfg.generator.generate().map_err(|e| e.to_string())?;
                let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| e.to_string())?;
                let out = pool.install(|| run_pipeline(&ds, &cfg)).map_err(|e| e.to_string())?;
                let json = graph_to_json(&out.graph, None).map_err(|e| e.to_string())?;
                let csv = out.metrics.as_ref().map(MetricsReport::to_csv).unwrap_or_default();
                outputs.push((json, csv));
            }
            if outputs[0] != outputs[1] {
                same = false;
                eprintln!("determinism: {name} outputs differ between runs");
            }
        }
        Ok((same, "graph JSON and metrics CSV identical across repeated runs".into()))
    };
    verdict(9, run)
}

fn verdict(id: usize, run: impl FnOnce() -> Result<(bool, String), String>) -> Verdict {
    match run() {
        Ok((pass, detail)) => Verdict { id, pass, detail },
        Err(e) => Verdict {
            id,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn main() {
    // `cargo test -- --list` and filters come through here as arguments.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let only: Vec<usize> = std::env::var("SC3D_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let criteria: [(usize, fn() -> Verdict); 9] = [
        (1, ranking_d30),
        (2, lorenz96),
        (3, nc8),
        (4, ablation_direction),
        (5, screening_recall),
        (6, unrolled_acyclicity),
        (7, numerical_oracles),
        (8, tracking),
        (9, determinism),
    ];
    let mut failed = 0;
    for (id, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        debug_assert_eq!(v.id, id);
        failed += usize::from(!v.pass);
        println!(
            "criterion {}: {} ({}) [{:.1}s]",
            v.id,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} criterion(s) failed");
}
