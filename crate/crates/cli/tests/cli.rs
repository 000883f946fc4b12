use std::path::Path;
use std::process::{Command, Output};

fn sc3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sc3d"))
        .args(args)
        .env_remove("SC3D_JOBS")
        .output()
        .expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

const QUICK: &str = r#"{
  "stage1": {"epochs": 20, "hidden_width": 8},
  "stage2": {"epochs": 20, "extract_every": 5}
}"#;

fn quick_config(dir: &Path) -> String {
    let p = path(dir, "cfg.json");
    std::fs::write(&p, QUICK).unwrap();
    p
}

#[test]
fn generate_discover_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let (data, truth, graph, metrics, log) = (
        path(dir.path(), "data.csv"),
        path(dir.path(), "truth.json"),
        path(dir.path(), "graph.json"),
        path(dir.path(), "metrics.csv"),
        path(dir.path(), "train.csv"),
    );
    let out = sc3d(&[
        "generate", "--system", "svar", "--d", "4", "--L", "2", "--T", "80", "--N", "1", "--seed", "0", "--out", &data,
        "--truth-out", &truth,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let header = std::fs::read_to_string(&data).unwrap();
    assert!(header.starts_with("traj,t,x0,x1,x2,x3\n"));
    assert_eq!(header.lines().count(), 81);

    let run = |extra: &[&str]| {
        let mut args = vec![
            "discover", "--data", &data, "--L", "2", "--instantaneous", "--config", &cfg, "--out", &graph, "--log", &log,
        ];
        args.extend_from_slice(extra);
        let out = sc3d(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(&graph).unwrap()
    };
    let first = run(&["--keep-intermediate"]);
    assert!(dir.path().join("graph.scores.json").exists());
    assert!(dir.path().join("graph.masks.json").exists());
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert!(log_text.starts_with("epoch,loss,nll,l1_lag,l1_inst,gamma,rho,two_cycle,frozen\n"));
    assert_eq!(log_text.lines().count(), 21);
    assert_eq!(run(&[]), first, "same seed must give byte-identical graphs");

    let out = sc3d(&["evaluate", "--est", &graph, "--truth", &truth, "--out", &metrics, "--top-k", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = std::fs::read_to_string(&metrics).unwrap();
    assert!(m.starts_with("shd_lag1,shd_lag2,shd_b,shd_total"), "{m}");
    assert_eq!(m.lines().count(), 2);
}

#[test]
fn sweep_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let csv = path(dir.path(), "sweep.csv");
    let out = sc3d(&[
        "sweep", "--kind", "d", "--values", "3,4", "--seeds", "2", "--T", "60", "--L", "1", "--config", &cfg, "--out",
        &csv, "--jobs", "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert!(rows[0].starts_with("d,seed,status,shd_a"));
    assert_eq!(rows.len(), 1 + 4 + 2);
    assert_eq!(rows.iter().filter(|r| r.contains(",summary,")).count(), 2);
}

#[test]
fn failed_cells_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    // T = 3 leaves no training pairs at L = 3, so every cell fails.
    let out = sc3d(&["ablate", "--variants", "full", "--d", "3", "--T", "3", "--seeds", "1", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("error"));
}

#[test]
fn unknown_variant_is_rejected() {
    let out = sc3d(&["ablate", "--variants", "full,bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn tracking_writes_window_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let csv = path(dir.path(), "tracking.csv");
    let out = sc3d(&[
        "track", "--system", "tvsem", "--T", "400", "--window", "100", "--stride", "50", "--config", &cfg, "--out", &csv,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("window_start,score_xy,score_yx,regime\n"));
    assert_eq!(text.lines().count(), 1 + 7);
}
