//! End-to-end recovery on systems whose generating model is known.

use nalgebra::DMatrix;
use sc3d::datagen::{simulate_svar, simulate_svar_with_graph, Nonlinearity, SvarSpec};
use sc3d::eval::{binarize, BinarizeRule, DEFAULT_EDGE_TOL};
use sc3d::graph::count_true;
use sc3d::pipeline::{run_pipeline, ExperimentConfig, GeneratorSpec, Variant};
use sc3d::predictor::GroupId;
use sc3d::stage1::{build_design, fit_node, Stage1Config};
use sc3d::{DynamicGraph, Rng, SystemTag, TimeSeriesDataset};

#[test]
fn lone_lagged_parent_dominates_stage1_scores() {
    let t = 500;
    let mut rng = Rng::new(4);
    let mut x = vec![0.0; t];
    let mut y = vec![0.0; t];
    for s in 0..t {
        x[s] = rng.normal();
        if s > 0 {
            y[s] = 0.9 * x[s - 1] + 0.05 * rng.normal();
        }
    }
    let values: Vec<f64> = (0..t).flat_map(|s| [x[s], y[s]]).collect();
    let ds = TimeSeriesDataset::new(1, t, 2, values, SystemTag::Svar).unwrap();
    let (groups, design) = build_design(&ds, 2, true).unwrap().remove(1);
    let (_, scores) = fit_node(1, groups.clone(), &design, &Stage1Config::default()).unwrap();
    let parent = groups
        .iter()
        .position(|g| *g == GroupId::Lagged { var: 0, lag: 1 })
        .unwrap();
    for (k, s) in scores.iter().enumerate() {
        if k != parent {
            assert!(scores[parent] >= 5.0 * s, "group {:?} scored {s} vs {}", groups[k], scores[parent]);
        }
    }
}

#[test]
fn single_parent_system_recovers_lag_support() {
    let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.8, 0.0]);
    let truth = DynamicGraph::new(vec![a1], DMatrix::zeros(2, 2), true).unwrap();
    let spec = SvarSpec {
        dim: 2,
        lag_order: 1,
        horizon: 500,
        seed: 9,
        ..SvarSpec::default()
    };
    let ds = simulate_svar_with_graph(&truth, &spec).unwrap();
    let config = ExperimentConfig {
        lag_order: 1,
        ..ExperimentConfig::default()
    };
    let out = run_pipeline(&ds, &config).unwrap();
    let est = binarize(&out.graph, BinarizeRule::Tol(DEFAULT_EDGE_TOL));
    assert_eq!(est.lags[0], truth.lag_supports()[0], "A_1 = {}", out.graph.lag_matrix(1));
}

#[test]
fn linear_svar_instant_f1_reaches_half() {
    let mut f1 = Vec::new();
    for seed in 0..5 {
        let spec = SvarSpec {
            dim: 10,
            lag_order: 3,
            horizon: 200,
            nonlinearity: Nonlinearity::Linear,
            seed,
            structure_seed: seed,
            ..SvarSpec::default()
        };
        let ds = simulate_svar(&spec).unwrap();
        let config = ExperimentConfig {
            lag_order: 3,
            ..ExperimentConfig::default()
        };
        let report = run_pipeline(&ds, &config).unwrap().metrics.unwrap();
        f1.push(report.f1_b);
    }
    let mean = f1.iter().sum::<f64>() / f1.len() as f64;
    assert!(mean >= 0.5, "F1_B per seed {f1:?}");
}

#[test]
fn no_stage1_variant_refines_under_full_masks() {
    let mut config = ExperimentConfig {
        generator: GeneratorSpec::Svar(SvarSpec {
            dim: 4,
            lag_order: 2,
            horizon: 80,
            ..SvarSpec::default()
        }),
        lag_order: 2,
        ..ExperimentConfig::default()
    };
    config.stage2.epochs = 5;
    Variant::NoStage1.apply(&mut config);
    let ds = config.generator.generate().unwrap();
    let out = run_pipeline(&ds, &config).unwrap();
    assert!(out.stage1.is_none());
    for m in out.masks.lag_masks() {
        assert_eq!(count_true(m), 16);
    }
    assert_eq!(count_true(out.masks.instant_mask()), 12);
    assert!(sc3d::graph::is_acyclic(&out.graph.instant_support()));
}
