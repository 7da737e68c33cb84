//! TV profile around `t_xi(n)`: a coupling upper estimate and a distinguishing-statistic
//! lower estimate at `t = t_xi(n) + gamma n`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::couplings::{overall_coupling_run, CouplingRun, OverallBudgets};
use crate::dynamics::{init_chain_with, Chain, Mode, Start};
use crate::error::{PottsError, Result};
use crate::io::fmt_f64;
use crate::model::{Configuration, ModelParams};
use crate::rng::{mix_seed, replica_rng, PottsRng};
use crate::theory::{critical_temperatures, xi_and_cutoff_time};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    /// Model; `n` is replaced by each entry of `n_list`.
    pub params: ModelParams,
    pub n_list: Vec<usize>,
    pub gamma_list: Vec<f64>,
    pub replicas: usize,
    /// Replicas used only to choose the threshold of the lower estimate.
    #[serde(default = "default_calibration")]
    pub calibration_replicas: usize,
    /// Steps (in units of `n`) from a uniform configuration used as a stationary draw.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default)]
    pub budgets: OverallBudgets,
    /// Coordinatewise thresholds; `None` uses [`crate::couplings::default_thresholds`].
    #[serde(default)]
    pub y: Option<Vec<f64>>,
}

fn default_calibration() -> usize {
    200
}

fn default_burn_in() -> f64 {
    20.0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutoffRow {
    pub n: usize,
    pub gamma: f64,
    pub t: u64,
    /// Fraction of coupled replicas not basket-coalesced by `t`.
    pub upper: f64,
    /// Gap at the held-out threshold minus two standard errors, floored at 0.
    pub lower: f64,
    pub lower_raw: f64,
    pub lower_se: f64,
    /// Threshold on `sqrt(n) ||S_t - Delta||_F`.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutoffProfile {
    pub xi: f64,
    pub rows: Vec<CutoffRow>,
    pub runs: Vec<(usize, Vec<CouplingRun>)>,
}

impl CutoffProfile {
    pub const CSV_HEADER: &'static str = "n,gamma,t,upper,lower,lower_raw,lower_se,threshold";

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.n,
                fmt_f64(r.gamma),
                r.t,
                fmt_f64(r.upper),
                fmt_f64(r.lower),
                fmt_f64(r.lower_raw),
                fmt_f64(r.lower_se),
                fmt_f64(r.threshold)
            )?;
        }
        Ok(())
    }

    pub fn write_runs_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", CouplingRun::CSV_HEADER)?;
        for (_, runs) in &self.runs {
            for (r, run) in runs.iter().enumerate() {
                run.write_csv_row(w, r as u64)?;
            }
        }
        Ok(())
    }

    pub fn rows_for(&self, n: usize) -> Vec<&CutoffRow> {
        self.rows.iter().filter(|r| r.n == n).collect()
    }

    /// `gamma` distance between the points where the lower estimate first drops to 0.8
    /// and to 0.2, by linear interpolation on the `gamma` grid.
    pub fn transition_width(&self, n: usize) -> Option<f64> {
        let rows = self.rows_for(n);
        let hi = crossing(&rows, 0.8)?;
        let lo = crossing(&rows, 0.2)?;
        Some(lo - hi)
    }
}

fn crossing(rows: &[&CutoffRow], level: f64) -> Option<f64> {
    for w in rows.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.lower >= level && b.lower < level {
            let f = (a.lower - level) / (a.lower - b.lower);
            return Some(a.gamma + f * (b.gamma - a.gamma));
        }
    }
    None
}

/// A draw close to the Gibbs law: a uniform configuration followed by `burn_in n` steps.
pub fn stationary_draw(params: &ModelParams, mode: Mode, burn_in: f64, rng: &mut PottsRng) -> Result<Chain> {
    let mut chain = init_chain_with(params, &Start::UniformRandom, mode, rng)?;
    for _ in 0..(burn_in * params.n as f64).ceil() as u64 {
        chain.step_with(rng);
    }
    chain.set_time(0);
    Ok(chain)
}

/// `sqrt(n) ||S_t - Delta||_F` at each of the sorted times `ts`, from a monochromatic start.
fn statistic_path(params: &ModelParams, ts: &[u64], rng: &mut PottsRng) -> Result<Vec<f64>> {
    let mut chain = init_chain_with(params, &Start::Monochromatic(0), Mode::Lumped, rng)?;
    let sqrt_n = (params.n as f64).sqrt();
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        while chain.time() < t {
            chain.step_with(rng);
        }
        out.push(sqrt_n * chain.frobenius_to_delta());
    }
    Ok(out)
}

fn stationary_statistic(params: &ModelParams, burn_in: f64, rng: &mut PottsRng) -> Result<f64> {
    let chain = stationary_draw(params, Mode::Lumped, burn_in, rng)?;
    Ok((params.n as f64).sqrt() * chain.frobenius_to_delta())
}

fn exceed(xs: &[f64], thr: f64) -> f64 {
    xs.iter().filter(|&&x| x > thr).count() as f64 / xs.len() as f64
}

/// Threshold maximizing `|P_dyn[stat > thr] - P_stat[stat > thr]|` over the pooled values.
fn best_threshold(dynamic: &[f64], stationary: &[f64]) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut candidates: Vec<f64> = dynamic.iter().chain(stationary).copied().collect();
    candidates.sort_by(|a, b| a.total_cmp(b));
    for &c in &candidates {
        let gap = (exceed(dynamic, c) - exceed(stationary, c)).abs();
        if gap > best.0 {
            best = (gap, c);
        }
    }
    best.1
}

struct StatSamples {
    dynamic: Vec<Vec<f64>>,
    stationary: Vec<f64>,
}

fn sample_statistics(params: &ModelParams, ts: &[u64], replicas: usize, burn_in: f64, seed: u64) -> Result<StatSamples> {
    let dynamic: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| statistic_path(params, ts, &mut replica_rng(seed, 2 * r as u64)))
        .collect::<Result<_>>()?;
    let stationary: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| stationary_statistic(params, burn_in, &mut replica_rng(seed, 2 * r as u64 + 1)))
        .collect::<Result<_>>()?;
    Ok(StatSamples { dynamic, stationary })
}

/// Overall-coupling runs from a monochromatic start against a stationary draw.
pub fn coupling_replicas(
    params: &ModelParams,
    replicas: usize,
    burn_in: f64,
    budgets: &OverallBudgets,
    y: &[f64],
    seed: u64,
) -> Result<Vec<CouplingRun>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r as u64);
            let tilde = stationary_draw(params, Mode::Full, burn_in, &mut rng)?;
            let sigma0 = Configuration::monochromatic(params, 0)?;
            let tilde0 = tilde.config().expect("full mode").clone();
            overall_coupling_run(sigma0, tilde0, params, budgets, y, &mut rng)
        })
        .collect()
}

pub fn cutoff_profile(cfg: &CutoffConfig, seed: u64) -> Result<CutoffProfile> {
    let ct = critical_temperatures(cfg.params.q)?;
    if cfg.params.beta_j() >= ct.beta_s {
        return Err(PottsError::OutOfRegime(format!(
            "cutoff needs beta < beta_s/J = {}",
            ct.beta_s / cfg.params.j()
        )));
    }
    if cfg.replicas == 0 || cfg.calibration_replicas == 0 {
        return Err(PottsError::InvalidParameter("replica counts must be positive".into()));
    }
    let mut gammas = cfg.gamma_list.clone();
    gammas.sort_by(|a, b| a.total_cmp(b));
    let mut rows = Vec::new();
    let mut all_runs = Vec::new();
    let mut xi = f64::NAN;
    for (k, &n) in cfg.n_list.iter().enumerate() {
        let params = cfg.params.with_n(n);
        params.validate()?;
        let (x, t_xi) = xi_and_cutoff_time(&params)?;
        xi = x;
        let ts: Vec<u64> = gammas
            .iter()
            .map(|g| (t_xi + g * n as f64).max(0.0).round() as u64)
            .collect();
        let y = cfg.y.clone().unwrap_or_else(|| crate::couplings::default_thresholds(&params));
        let cell = mix_seed(seed, k as u64);
        let runs = coupling_replicas(&params, cfg.replicas, cfg.burn_in, &cfg.budgets, &y, mix_seed(cell, 0))?;
        let calib = sample_statistics(&params, &ts, cfg.calibration_replicas, cfg.burn_in, mix_seed(cell, 1))?;
        let main = sample_statistics(&params, &ts, cfg.replicas, cfg.burn_in, mix_seed(cell, 2))?;
        for (gi, (&gamma, &t)) in gammas.iter().zip(&ts).enumerate() {
            let column = |s: &StatSamples| s.dynamic.iter().map(|d| d[gi]).collect::<Vec<f64>>();
            let threshold = best_threshold(&column(&calib), &calib.stationary);
            let dyn_main = column(&main);
            let (p1, p2) = (exceed(&dyn_main, threshold), exceed(&main.stationary, threshold));
            let se = (p1 * (1.0 - p1) / dyn_main.len() as f64 + p2 * (1.0 - p2) / main.stationary.len() as f64).sqrt();
            let raw = (p1 - p2).abs();
            let upper = runs.iter().filter(|r| !r.coalesced_by(t as f64)).count() as f64 / runs.len() as f64;
            rows.push(CutoffRow {
                n,
                gamma,
                t,
                upper,
                lower: (raw - 2.0 * se).max(0.0),
                lower_raw: raw,
                lower_se: se,
                threshold,
            });
        }
        all_runs.push((n, runs));
    }
    Ok(CutoffProfile {
        xi,
        rows,
        runs: all_runs,
    })
}
