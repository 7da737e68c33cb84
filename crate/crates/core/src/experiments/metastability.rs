//! Low-temperature measurements: exit times from the `nu^1` basin and the bottleneck ratio.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Chain;
use crate::error::{PottsError, Result};
use crate::exact::{enumerate_states, stationary_distribution};
use crate::io::{fmt_f64, fmt_opt_u64};
use crate::model::{CountMatrix, ModelParams, ProportionMatrix};
use crate::rng::{replica_rng, Draw};
use crate::theory::{equilibrium_macrostates, largest_spinodal_zero};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitConfig {
    /// Model; `n` is replaced by each entry of `n_list`.
    pub params: ModelParams,
    pub n_list: Vec<usize>,
    pub replicas: usize,
    /// Exit once `||S - m nu^1||_F > basin_radius`.
    pub basin_radius: f64,
    #[serde(default = "default_cap")]
    pub cap: u64,
}

fn default_cap() -> u64 {
    1_000_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExitRow {
    pub n: usize,
    pub replicas: usize,
    pub censored: usize,
    pub cap: u64,
    /// Quantiles with censored runs counted as `+inf`; `None` when the quantile is censored.
    pub q10: Option<u64>,
    pub median: Option<u64>,
    pub q90: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExitReport {
    pub u: f64,
    pub basin_radius: f64,
    pub rows: Vec<ExitRow>,
    pub times: Vec<(usize, Vec<Option<u64>>)>,
}

impl ExitReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "n,replicas,censored,cap,basin_radius,u,q10,median,q90")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.n,
                r.replicas,
                r.censored,
                r.cap,
                fmt_f64(self.basin_radius),
                fmt_f64(self.u),
                fmt_opt_u64(r.q10),
                fmt_opt_u64(r.median),
                fmt_opt_u64(r.q90)
            )?;
        }
        Ok(())
    }

    pub fn write_times_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "n,replica,exit_time")?;
        for (n, times) in &self.times {
            for (r, t) in times.iter().enumerate() {
                writeln!(w, "{n},{r},{}", fmt_opt_u64(*t))?;
            }
        }
        Ok(())
    }

    pub fn median(&self, n: usize) -> Option<u64> {
        self.rows.iter().find(|r| r.n == n).and_then(|r| r.median)
    }
}

/// Empirical quantile (lower order statistic) with `None` standing for `+inf`.
pub fn censored_quantile(times: &[Option<u64>], p: f64) -> Option<u64> {
    let mut sorted: Vec<u64> = times.iter().map(|t| t.unwrap_or(u64::MAX)).collect();
    sorted.sort_unstable();
    let idx = ((sorted.len() as f64 - 1.0) * p).floor() as usize;
    let v = *sorted.get(idx)?;
    (v != u64::MAX).then_some(v)
}

fn basin_center(params: &ModelParams) -> Result<ProportionMatrix> {
    let ms = equilibrium_macrostates(params.beta_j(), params.q, params.m);
    if !(ms.u > 0.0) {
        return Err(PottsError::OutOfRegime(format!(
            "no ordered macrostate at betaJ = {}",
            params.beta_j()
        )));
    }
    Ok(ms.scaled_nu(0))
}

/// Exit times of the lumped chain started at the counts nearest to `m nu^1`.
pub fn exit_times(params: &ModelParams, replicas: usize, basin_radius: f64, cap: u64, seed: u64) -> Result<Vec<Option<u64>>> {
    params.validate()?;
    let center = basin_center(params)?;
    let start = CountMatrix::nearest_to(params, &center);
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r as u64);
            let mut chain = Chain::from_counts(params, start.clone())?;
            let dist = |c: &Chain| c.proportions().frobenius_distance(&center);
            if dist(&chain) > basin_radius {
                return Ok(Some(0));
            }
            while chain.time() < cap {
                chain.step_with(&mut rng);
                if dist(&chain) > basin_radius {
                    return Ok(Some(chain.time()));
                }
            }
            Ok(None)
        })
        .collect()
}

pub fn exit_time_measurement(cfg: &ExitConfig, seed: u64) -> Result<ExitReport> {
    let ms = equilibrium_macrostates(cfg.params.beta_j(), cfg.params.q, cfg.params.m);
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for (k, &n) in cfg.n_list.iter().enumerate() {
        let params = cfg.params.with_n(n);
        let times = exit_times(&params, cfg.replicas, cfg.basin_radius, cfg.cap, crate::rng::mix_seed(seed, k as u64))?;
        rows.push(ExitRow {
            n,
            replicas: cfg.replicas,
            censored: times.iter().filter(|t| t.is_none()).count(),
            cap: cfg.cap,
            q10: censored_quantile(&times, 0.1),
            median: censored_quantile(&times, 0.5),
            q90: censored_quantile(&times, 0.9),
        });
        all.push((n, times));
    }
    Ok(ExitReport {
        u: ms.u,
        basin_radius: cfg.basin_radius,
        rows,
        times: all,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BottleneckConfig {
    pub params: ModelParams,
    pub delta1: f64,
    /// Steps of the restricted chain when the state space is too large to enumerate.
    #[serde(default = "default_estimate_steps")]
    pub estimate_steps: u64,
}

fn default_estimate_steps() -> u64 {
    10_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BottleneckReport {
    pub n: usize,
    /// Largest zero of `D`.
    pub s_star: f64,
    pub delta1: f64,
    pub mass_a: f64,
    pub mass_boundary: f64,
    pub ratio: f64,
    pub exact: bool,
}

impl BottleneckReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "n,s_star,delta1,mass_a,mass_boundary,ratio,exact")?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            self.n,
            fmt_f64(self.s_star),
            fmt_f64(self.delta1),
            fmt_f64(self.mass_a),
            fmt_f64(self.mass_boundary),
            fmt_f64(self.ratio),
            self.exact
        )
    }
}

/// `A = {S : S^{i1} >= s* - delta1 for all i}`.
fn in_a(c: &CountMatrix, level: f64) -> bool {
    let bs = c.block_size() as f64;
    (0..c.m()).all(|i| c.get(i, 0) as f64 / bs >= level)
}

/// States of `A` with a one-step move out of `A`: some block where recoloring one
/// color-1 vertex drops below the level.
fn on_boundary(c: &CountMatrix, level: f64) -> bool {
    let bs = c.block_size() as f64;
    (0..c.m()).any(|i| c.get(i, 0) > 0 && (c.get(i, 0) - 1) as f64 / bs < level)
}

fn s_star(params: &ModelParams) -> Result<f64> {
    largest_spinodal_zero(params.beta_j(), params.q).ok_or_else(|| {
        PottsError::OutOfRegime(format!("D has no zero above 1/q at betaJ = {}", params.beta_j()))
    })
}

/// `mu*(dA) / mu*(A)`, exact when the lumped state space fits the enumeration cap and
/// otherwise estimated from the chain restricted to `A` (moves leaving `A` are suppressed,
/// which keeps `mu*` conditioned on `A` stationary).
pub fn bottleneck_ratio(params: &ModelParams, delta1: f64, estimate_steps: u64, seed: u64) -> Result<BottleneckReport> {
    params.validate()?;
    let s = s_star(params)?;
    let level = s - delta1;
    let report = |mass_a: f64, mass_boundary: f64, exact: bool| {
        if mass_a <= 0.0 {
            return Err(PottsError::InvalidParameter("the bottleneck set A is empty".into()));
        }
        Ok(BottleneckReport {
            n: params.n,
            s_star: s,
            delta1,
            mass_a,
            mass_boundary,
            ratio: mass_boundary / mass_a,
            exact,
        })
    };
    match enumerate_states(params.n, params.m, params.q) {
        Ok(space) => {
            let pi = stationary_distribution(&space, params)?;
            let (mut ma, mut mb) = (0.0, 0.0);
            for (st, p) in space.states().iter().zip(&pi) {
                if in_a(st, level) {
                    ma += p;
                    if on_boundary(st, level) {
                        mb += p;
                    }
                }
            }
            report(ma, mb, true)
        }
        Err(PottsError::CapExceeded { .. }) => {
            let center = basin_center(params)?;
            let start = CountMatrix::nearest_to(params, &center);
            if !in_a(&start, level) {
                return Err(PottsError::InvalidParameter("the ordered state lies outside A".into()));
            }
            let mut chain = Chain::from_counts(params, start)?;
            let mut rng = replica_rng(seed, 0);
            let mut g = vec![0.0; params.q];
            let (m, bs) = (params.m, params.block_size());
            let burn = estimate_steps / 10;
            let mut hits = 0u64;
            for t in 0..burn + estimate_steps {
                let i = rng.uniform_index(m);
                let r = rng.uniform_index(bs) as u32;
                let row = chain.counts().row(i);
                let mut acc = 0;
                let mut old = params.q - 1;
                for (j, &c) in row.iter().enumerate() {
                    acc += c;
                    if r < acc {
                        old = j;
                        break;
                    }
                }
                chain.conditional_into(i, old, &mut g);
                let new = rng.categorical(&g);
                let bs_f = bs as f64;
                let leaves = old == 0 && new != 0 && (chain.counts().get(i, 0) - 1) as f64 / bs_f < level;
                if !leaves {
                    chain.apply_move(i, old, new, &mut rng);
                }
                if t >= burn && on_boundary(chain.counts(), level) {
                    hits += 1;
                }
            }
            report(1.0, hits as f64 / estimate_steps as f64, false)
        }
        Err(e) => Err(e),
    }
}
