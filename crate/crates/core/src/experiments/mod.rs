//! Experiment harness: configs, per-experiment CSV writers, sweeps with manifests.
//!
//! Replicas run on a rayon pool sized by the `POTTS_THREADS` environment variable
//! (all cores when unset). Each replica draws from its own stream of the cell seed, and
//! results are collected in replica order, so outputs do not depend on the thread count.

pub mod contraction;
pub mod cutoff;
pub mod metastability;
pub mod sweep;
pub mod theory_check;

pub use contraction::{frobenius_decay, synchronized_contraction, ContractionConfig, DecayFit};
pub use cutoff::{cutoff_profile, CutoffConfig, CutoffProfile, CutoffRow};
pub use metastability::{bottleneck_ratio, exit_time_measurement, BottleneckConfig, BottleneckReport, ExitConfig, ExitReport};
pub use sweep::{load_sweep_config, sweep_run, sweep_run_partial, Grid, GridAxis, RunManifest, SweepConfig};
pub use theory_check::{theory_check, CheckStatus, CltConfig, TheoryCheckConfig, TheoryReport};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::couplings::{default_thresholds, CouplingRun, OverallBudgets};
use crate::dynamics::{init_chain, run_trajectory, Mode, Start};
use crate::error::{PottsError, Result};
use crate::exact::{enumerate_states, mixing_time_exact, transition_matrix, write_kernel_csv};
use crate::io::fmt_f64;
use crate::model::{CountMatrix, ModelParams};

pub const THREADS_ENV: &str = "POTTS_THREADS";

/// Runs `f` on a pool sized by `POTTS_THREADS`.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let k: usize = v
            .parse()
            .map_err(|_| PottsError::InvalidParameter(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(k);
    }
    let pool = builder
        .build()
        .map_err(|e| PottsError::InvalidParameter(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Serializable form of [`Start`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum StartSpec {
    UniformRandom,
    Monochromatic { color: usize },
    DeltaNearest,
    Counts { rows: Vec<Vec<u32>> },
}

impl StartSpec {
    pub fn to_start(&self) -> Result<Start> {
        Ok(match self {
            StartSpec::UniformRandom => Start::UniformRandom,
            StartSpec::Monochromatic { color } => Start::Monochromatic(*color),
            StartSpec::DeltaNearest => Start::DeltaNearest,
            StartSpec::Counts { rows } => Start::Counts(CountMatrix::from_rows(rows)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub params: ModelParams,
    pub start: StartSpec,
    pub mode: Mode,
    pub steps: u64,
    pub sample_every: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactConfig {
    pub params: ModelParams,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_t")]
    pub max_t: u64,
}

fn default_epsilon() -> f64 {
    0.25
}

fn default_max_t() -> u64 {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleConfig {
    pub params: ModelParams,
    pub replicas: usize,
    #[serde(default)]
    pub budgets: OverallBudgets,
    #[serde(default)]
    pub y: Option<Vec<f64>>,
    /// Burn-in of the stationary start, in units of `n`.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
}

fn default_burn_in() -> f64 {
    20.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ExperimentConfig {
    Simulate(SimulateConfig),
    Exact(ExactConfig),
    Couple(CoupleConfig),
    Cutoff(CutoffConfig),
    Metastability(ExitConfig),
    Bottleneck(BottleneckConfig),
    TheoryCheck(TheoryCheckConfig),
    Contraction(ContractionConfig),
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::Simulate(_) => "simulate",
            ExperimentConfig::Exact(_) => "exact",
            ExperimentConfig::Couple(_) => "couple",
            ExperimentConfig::Cutoff(_) => "cutoff",
            ExperimentConfig::Metastability(_) => "metastability",
            ExperimentConfig::Bottleneck(_) => "bottleneck",
            ExperimentConfig::TheoryCheck(_) => "theory-check",
            ExperimentConfig::Contraction(_) => "contraction",
        }
    }
}

fn create(dir: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    files.push(path.clone());
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs one experiment, writing `<prefix>_*.csv` files into `dir`; returns their paths.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    match cfg {
        ExperimentConfig::Simulate(c) => {
            let mut state = init_chain(&c.params, &c.start.to_start()?, c.mode, seed)?;
            let rec = run_trajectory(&mut state, c.steps, c.sample_every);
            let mut w = create(dir, &format!("{prefix}_trajectory.csv"), &mut files)?;
            rec.write_csv(&mut w)?;
            w.flush()?;
        }
        ExperimentConfig::Exact(c) => {
            let space = enumerate_states(c.params.n, c.params.m, c.params.q)?;
            let kernel = transition_matrix(&space, &c.params)?;
            let mut w = create(dir, &format!("{prefix}_states.csv"), &mut files)?;
            space.write_csv(&mut w, &c.params, Some(kernel.stationary()))?;
            w.flush()?;
            let mut w = create(dir, &format!("{prefix}_kernel.csv"), &mut files)?;
            write_kernel_csv(&kernel, &mut w)?;
            w.flush()?;
            let mix = mixing_time_exact(&kernel, c.epsilon, c.max_t);
            let mut w = create(dir, &format!("{prefix}_mixing.csv"), &mut files)?;
            writeln!(w, "t,worst_tv,epsilon,mixing_time")?;
            let tmix = mix.t.map_or_else(String::new, |t| t.to_string());
            for (t, tv) in mix.worst_tv.iter().enumerate() {
                writeln!(w, "{t},{},{},{tmix}", fmt_f64(*tv), fmt_f64(c.epsilon))?;
            }
            w.flush()?;
        }
        ExperimentConfig::Couple(c) => {
            let y = c.y.clone().unwrap_or_else(|| default_thresholds(&c.params));
            let runs = cutoff::coupling_replicas(&c.params, c.replicas, c.burn_in, &c.budgets, &y, seed)?;
            let mut w = create(dir, &format!("{prefix}_coupling.csv"), &mut files)?;
            writeln!(w, "{}", CouplingRun::CSV_HEADER)?;
            for (r, run) in runs.iter().enumerate() {
                run.write_csv_row(&mut w, r as u64)?;
            }
            w.flush()?;
        }
        ExperimentConfig::Cutoff(c) => {
            let prof = cutoff_profile(c, seed)?;
            let mut w = create(dir, &format!("{prefix}_profile.csv"), &mut files)?;
            prof.write_csv(&mut w)?;
            w.flush()?;
            let mut w = create(dir, &format!("{prefix}_coupling.csv"), &mut files)?;
            prof.write_runs_csv(&mut w)?;
            w.flush()?;
        }
        ExperimentConfig::Metastability(c) => {
            let rep = exit_time_measurement(c, seed)?;
            let mut w = create(dir, &format!("{prefix}_exit_quantiles.csv"), &mut files)?;
            rep.write_csv(&mut w)?;
            w.flush()?;
            let mut w = create(dir, &format!("{prefix}_exit_times.csv"), &mut files)?;
            rep.write_times_csv(&mut w)?;
            w.flush()?;
        }
        ExperimentConfig::Bottleneck(c) => {
            let rep = bottleneck_ratio(&c.params, c.delta1, c.estimate_steps, seed)?;
            let mut w = create(dir, &format!("{prefix}_bottleneck.csv"), &mut files)?;
            rep.write_csv(&mut w)?;
            w.flush()?;
        }
        ExperimentConfig::TheoryCheck(c) => {
            let rep = theory_check(c, seed)?;
            let mut w = create(dir, &format!("{prefix}_theory.csv"), &mut files)?;
            rep.write_csv(&mut w)?;
            w.flush()?;
        }
        ExperimentConfig::Contraction(c) => {
            let fits = [
                ("synchronized", synchronized_contraction(c, seed)?),
                ("frobenius", frobenius_decay(c, crate::rng::mix_seed(seed, 1))?),
            ];
            for (name, fit) in fits {
                let mut w = create(dir, &format!("{prefix}_{name}.csv"), &mut files)?;
                fit.write_csv(&mut w)?;
                w.flush()?;
            }
        }
    }
    Ok(files)
}

/// Runs `f(r)` for `r in 0..replicas` in parallel, keeping replica order.
pub fn par_replicas<T: Send>(replicas: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..replicas).into_par_iter().map(f).collect()
}

/// Model parameters with the given `beta` expressed as a multiple of `beta_s / J`.
pub fn params_at_spinodal_fraction(q: usize, m: usize, a: f64, b: f64, fraction: f64, n: usize) -> Result<ModelParams> {
    let ct = crate::theory::critical_temperatures(q)?;
    let j = crate::model::effective_coupling(a, b, m)?;
    ModelParams::new(q, m, a, b, fraction * ct.beta_s / j, n)
}
