use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use potts_core::error::PottsError;
use potts_core::experiments::metastability::censored_quantile;
use potts_core::experiments::*;
use potts_core::model::ModelParams;
use potts_core::theory::{beta_c, critical_temperatures};
use serde_json::json;

fn params(beta: f64, n: usize) -> ModelParams {
    ModelParams::new(3, 2, 1.0, 2.0, beta, n).unwrap()
}

fn beta_s_over_j() -> f64 {
    critical_temperatures(3).unwrap().beta_s / params(0.0, 6).j()
}

fn small_sweep() -> SweepConfig {
    serde_json::from_value(json!({
        "schema_version": 1,
        "master_seed": 42,
        "cells": [
            {"kind": "exact", "params": {"q": 3, "m": 2, "a": 1.0, "b": 2.0, "beta": 0.4, "n": 6}}
        ],
        "grid": {
            "base": {
                "kind": "simulate",
                "params": {"q": 3, "m": 2, "a": 1.0, "b": 2.0, "beta": 0.5, "n": 60},
                "start": {"type": "uniform-random"},
                "mode": "full",
                "steps": 2000,
                "sample_every": 100
            },
            "axes": [
                {"path": "/params/beta", "values": [0.2, 0.8]},
                {"path": "/mode", "values": ["full", "lumped"]}
            ]
        }
    }))
    .unwrap()
}

/// File name to contents, manifest excluded.
fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn grid_expands_last_axis_fastest() {
    let cells = small_sweep().expand().unwrap();
    assert_eq!(cells.len(), 5);
    assert_eq!(cells[0].kind(), "exact");
    let got: Vec<(f64, String)> = cells[1..]
        .iter()
        .map(|c| match c {
            ExperimentConfig::Simulate(s) => (s.params.beta, format!("{:?}", s.mode)),
            _ => panic!("expected simulate"),
        })
        .collect();
    assert_eq!(
        got,
        vec![(0.2, "Full".into()), (0.2, "Lumped".into()), (0.8, "Full".into()), (0.8, "Lumped".into())]
    );
}

#[test]
fn malformed_configs_are_rejected() {
    let mut bad = serde_json::to_value(small_sweep()).unwrap();
    bad["grid"]["axes"][0]["path"] = json!("/params/nope/deeper");
    let cfg: SweepConfig = serde_json::from_value(bad).unwrap();
    assert!(cfg.expand().is_err());

    let mut v = small_sweep();
    v.schema_version = 7;
    assert!(v.expand().is_err());

    let extra = json!({"schema_version": 1, "master_seed": 0, "colour": 3});
    assert!(serde_json::from_value::<SweepConfig>(extra).is_err());

    // parameters are validated while parsing
    let cell = json!({"kind": "exact", "params": {"q": 3, "m": 2, "a": 1.0, "b": 2.0, "beta": 0.4, "n": 7}});
    assert!(serde_json::from_value::<ExperimentConfig>(cell).is_err());
    let cell = json!({"kind": "exact", "params": {"q": 3, "m": 2, "a": 1.0, "b": 2.0, "beta": -1.0, "n": 6}});
    assert!(serde_json::from_value::<ExperimentConfig>(cell).is_err());
}

#[test]
fn empty_grid_writes_only_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_sweep();
    cfg.cells.clear();
    cfg.grid.as_mut().unwrap().axes[1].values.clear();
    let man = sweep_run(&cfg, dir.path()).unwrap();
    assert!(man.cells.is_empty());
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("manifest.json")]);
}

#[test]
fn repeated_sweeps_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_sweep();
    let ma = sweep_run(&cfg, a.path()).unwrap();
    let mb = sweep_run(&cfg, b.path()).unwrap();
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    assert_eq!(fa.len(), 3 + 4);
    assert_eq!(fa, fb);
    for (x, y) in ma.cells.iter().zip(&mb.cells) {
        assert_eq!(x.files, y.files);
        assert_eq!(x.seed, y.seed);
    }
    // distinct cells draw distinct streams
    assert_ne!(fa["cell_0001_simulate_trajectory.csv"], fa["cell_0003_simulate_trajectory.csv"]);
}

#[test]
fn resumed_sweep_matches_a_clean_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_sweep();
    let partial = sweep_run_partial(&cfg, a.path(), Some(2)).unwrap();
    assert_eq!(partial.cells.len(), 2);
    let first = partial.cells[0].clone();
    let resumed = sweep_run(&cfg, a.path()).unwrap();
    assert_eq!(resumed.cells.len(), 5);
    // the finished cell was reused, not recomputed
    assert_eq!(resumed.cells[0], first);
    sweep_run(&cfg, b.path()).unwrap();
    assert_eq!(csv_files(a.path()), csv_files(b.path()));
}

#[test]
fn tampered_outputs_are_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_sweep();
    sweep_run(&cfg, dir.path()).unwrap();
    let before = csv_files(dir.path());
    let victim = dir.path().join("cell_0002_simulate_trajectory.csv");
    fs::write(&victim, "garbage").unwrap();
    sweep_run(&cfg, dir.path()).unwrap();
    assert_eq!(csv_files(dir.path()), before);
}

#[test]
fn manifest_replays_to_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_sweep();
    sweep_run(&cfg, a.path()).unwrap();
    let loaded = RunManifest::load(a.path()).unwrap();
    assert_eq!(loaded.config, cfg);
    let replay = load_sweep_config(&a.path().join("manifest.json")).unwrap();
    assert_eq!(replay, cfg);
    sweep_run(&replay, b.path()).unwrap();
    assert_eq!(csv_files(a.path()), csv_files(b.path()));
}

#[test]
fn exit_times_need_an_ordered_phase() {
    let cfg = ExitConfig {
        params: params(0.3 * beta_s_over_j(), 200),
        n_list: vec![200],
        replicas: 4,
        basin_radius: 0.1,
        cap: 1000,
    };
    assert!(matches!(exit_time_measurement(&cfg, 0), Err(PottsError::OutOfRegime(_))));
}

#[test]
fn exit_times_are_reproducible() {
    let cfg = ExitConfig {
        params: params(1.5 * beta_s_over_j(), 60),
        n_list: vec![60, 120],
        replicas: 16,
        basin_radius: 0.1,
        cap: 1_000_000,
    };
    let a = exit_time_measurement(&cfg, 5).unwrap();
    let b = exit_time_measurement(&cfg, 5).unwrap();
    let c = exit_time_measurement(&cfg, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.times, c.times);
    assert!(a.u > 0.0);
    assert_eq!(a.rows.len(), 2);
    for row in &a.rows {
        let inf = |t: Option<u64>| t.unwrap_or(u64::MAX);
        assert!(inf(row.q10) <= inf(row.median) && inf(row.median) <= inf(row.q90));
    }
}

#[test]
fn censored_quantiles() {
    let t = [Some(5), None, Some(1), Some(3), None];
    assert_eq!(censored_quantile(&t, 0.0), Some(1));
    assert_eq!(censored_quantile(&t, 0.5), Some(5));
    assert_eq!(censored_quantile(&t, 0.9), None);
}

#[test]
fn bottleneck_needs_an_ordered_phase() {
    assert!(matches!(bottleneck_ratio(&params(0.0, 12), 0.3, 1000, 0), Err(PottsError::OutOfRegime(_))));
}

// Exact value at n = 12, beta = 1.2 beta_c / J, delta1 = 0.3, frozen.
const BOTTLENECK_N12: f64 = 0.345_480_802_196_385_83;

#[test]
fn bottleneck_regression_at_n12() {
    let p = params(1.2 * beta_c(3) / params(0.0, 12).j(), 12);
    let r = bottleneck_ratio(&p, 0.3, 1000, 0).unwrap();
    assert!(r.exact);
    assert!(r.mass_boundary <= r.mass_a);
    assert!((r.ratio - BOTTLENECK_N12).abs() < 1e-12, "ratio {:.17}", r.ratio);
}

#[test]
fn cutoff_rejects_low_temperature() {
    let cfg = CutoffConfig {
        params: params(beta_s_over_j(), 120),
        n_list: vec![120],
        gamma_list: vec![0.0],
        replicas: 4,
        calibration_replicas: 4,
        burn_in: 1.0,
        budgets: Default::default(),
        y: None,
    };
    assert!(matches!(cutoff_profile(&cfg, 0), Err(PottsError::OutOfRegime(_))));
}

#[test]
fn cutoff_profile_shape() {
    let cfg = CutoffConfig {
        params: params(0.5 * beta_s_over_j(), 120),
        n_list: vec![120],
        gamma_list: vec![4.0, -4.0, 0.0, -2.0, 2.0],
        replicas: 40,
        calibration_replicas: 40,
        burn_in: 20.0,
        budgets: Default::default(),
        y: None,
    };
    let prof = cutoff_profile(&cfg, 3).unwrap();
    let rows = prof.rows_for(120);
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[0].gamma < w[1].gamma && w[0].t <= w[1].t));
    assert!(rows.windows(2).all(|w| w[1].upper <= w[0].upper));
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.upper));
        assert!((0.0..=1.0).contains(&r.lower));
        assert!(r.lower <= r.lower_raw + 1e-12);
    }
    assert_eq!(prof.runs[0].1.len(), 40);
}

#[test]
fn theory_check_at_infinite_temperature() {
    let cfg = TheoryCheckConfig {
        params: params(0.0, 1000),
        samples: 2000,
        path_steps: 64,
        lipschitz_radius: 1e-3,
        lipschitz_samples: 500,
        clt: None,
    };
    let r = theory_check(&cfg, 1).unwrap();
    assert!(r.all_pass(), "{r:?}");
    for name in ["g_upper_bound", "aggregate_g_variation", "local_lipschitz"] {
        assert_eq!(r.get(name).unwrap().status, CheckStatus::Pass, "{name}");
    }
}

#[test]
fn theory_check_reports_out_of_regime() {
    let cfg = TheoryCheckConfig {
        params: params(1.1 * beta_s_over_j(), 1000),
        samples: 100,
        path_steps: 16,
        lipschitz_radius: 1e-3,
        lipschitz_samples: 10,
        clt: None,
    };
    let r = theory_check(&cfg, 1).unwrap();
    assert_eq!(r.get("g_upper_bound").unwrap().status, CheckStatus::OutOfRegime);
}

#[test]
fn spinodal_fraction_params() {
    let p = params_at_spinodal_fraction(3, 2, 1.0, 2.0, 0.5, 100).unwrap();
    assert!((p.beta_j() - 0.5 * critical_temperatures(3).unwrap().beta_s).abs() < 1e-12);
    assert!(params_at_spinodal_fraction(3, 2, 1.0, 2.0, 0.5, 101).is_err());
}
