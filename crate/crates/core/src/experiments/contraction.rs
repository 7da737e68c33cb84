//! Measured decay rates near `Delta`: synchronized-coupling contraction of
//! `E ||S - S~||_(1,1)` and relaxation of `E ||S - Delta||_F^2`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::couplings::{synchronized_step, Pair};
use crate::dynamics::Chain;
use crate::error::{PottsError, Result};
use crate::io::fmt_f64;
use crate::model::{CountMatrix, ModelParams, ProportionMatrix};
use crate::rng::replica_rng;
use crate::theory::{clt_covariance, contraction_constant, xi_and_cutoff_time};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionConfig {
    pub params: ModelParams,
    pub replicas: usize,
    /// Starting displacement `offset (e_1 - e_2)` of every row from `Delta`.
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// Horizon in units of `xi n`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Ball radius for the synchronized coupling; `None` means unrestricted.
    #[serde(default)]
    pub rho: Option<f64>,
    /// Points are fitted while the signal stays above this fraction of its start.
    #[serde(default = "default_fit_floor")]
    pub fit_floor: f64,
}

fn default_offset() -> f64 {
    0.1
}

fn default_horizon() -> f64 {
    5.0
}

fn default_points() -> usize {
    50
}

fn default_fit_floor() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub times: Vec<u64>,
    pub mean: Vec<f64>,
    /// Value subtracted before taking logs.
    pub floor: f64,
    pub points_used: usize,
    /// Fitted `-d/dt ln(mean - floor)`.
    pub rate: f64,
    pub predicted_rate: f64,
    pub rate_relative_error: f64,
}

impl DecayFit {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "t,mean,floor,rate,predicted_rate")?;
        for (t, m) in self.times.iter().zip(&self.mean) {
            writeln!(
                w,
                "{t},{},{},{},{}",
                fmt_f64(*m),
                fmt_f64(self.floor),
                fmt_f64(self.rate),
                fmt_f64(self.predicted_rate)
            )?;
        }
        Ok(())
    }

    /// Per-step factor `exp(-rate)`.
    pub fn factor(&self) -> f64 {
        (-self.rate).exp()
    }
}

/// Least-squares slope of `ln y` against `t`, over the leading points with `y > floor_frac y_0`.
fn fit_log_slope(times: &[u64], ys: &[f64], floor_frac: f64) -> (f64, usize) {
    let y0 = ys[0];
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(ys)
        .take_while(|(_, &y)| y > floor_frac * y0 && y > 0.0)
        .map(|(&t, &y)| (t as f64, y.ln()))
        .collect();
    let k = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, pts.len());
    }
    let (mt, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    (sxy / sxx, pts.len())
}

fn displaced(params: &ModelParams, offset: f64) -> CountMatrix {
    let (m, q) = (params.m, params.q);
    let mut row = vec![1.0 / q as f64; q];
    row[0] += offset;
    row[1] -= offset;
    CountMatrix::nearest_to(params, &ProportionMatrix::repeated_row(m, &row))
}

fn sample_times(horizon: u64, points: usize) -> Vec<u64> {
    (0..=points).map(|k| horizon * k as u64 / points as u64).collect()
}

fn check(cfg: &ContractionConfig) -> Result<(f64, u64)> {
    cfg.params.validate()?;
    if cfg.replicas == 0 || cfg.points == 0 {
        return Err(PottsError::InvalidParameter("replicas and points must be positive".into()));
    }
    let (xi, _) = xi_and_cutoff_time(&cfg.params)?;
    Ok((xi, (cfg.horizon * xi * cfg.params.n as f64).ceil() as u64))
}

fn mean_paths(paths: Vec<Vec<f64>>) -> Vec<f64> {
    let k = paths.len() as f64;
    let mut mean = vec![0.0; paths[0].len()];
    for p in &paths {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / k;
        }
    }
    mean
}

/// Synchronized coupling of `Delta + offset (e_1 - e_2)` against `Delta - offset (e_1 - e_2)`
/// (lumped chains). The fitted per-step factor of `E ||S - S~||_(1,1)` is compared with
/// `p = 1 - (1 - 2 betaJ/q)/n`.
pub fn synchronized_contraction(cfg: &ContractionConfig, seed: u64) -> Result<DecayFit> {
    let (_, horizon) = check(cfg)?;
    let params = &cfg.params;
    let times = sample_times(horizon, cfg.points);
    let rho = cfg.rho.unwrap_or(f64::INFINITY);
    let (sx, sy) = (displaced(params, cfg.offset), displaced(params, -cfg.offset));
    let paths: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r as u64);
            let mut pair = Pair::new(Chain::from_counts(params, sx.clone())?, Chain::from_counts(params, sy.clone())?)?;
            let mut out = Vec::with_capacity(times.len());
            for &t in &times {
                while pair.time() < t {
                    synchronized_step(&mut pair, rho, &mut rng)?;
                }
                out.push(pair.l11_distance());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mean = mean_paths(paths);
    let (slope, used) = fit_log_slope(&times, &mean, cfg.fit_floor);
    let predicted = -contraction_constant(params).ln();
    Ok(DecayFit {
        times,
        mean,
        floor: 0.0,
        points_used: used,
        rate: -slope,
        predicted_rate: predicted,
        rate_relative_error: (-slope - predicted).abs() / predicted,
    })
}

/// `E ||S_t - Delta||_F^2` from `Delta + offset (e_1 - e_2)`, fitted after subtracting the
/// stationary level `(m/n) tr Lambda`; the rate is compared with `1/(xi n)`.
pub fn frobenius_decay(cfg: &ContractionConfig, seed: u64) -> Result<DecayFit> {
    let (xi, horizon) = check(cfg)?;
    let params = &cfg.params;
    let times = sample_times(horizon, cfg.points);
    let start = displaced(params, cfg.offset);
    let paths: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r as u64);
            let mut chain = Chain::from_counts(params, start.clone())?;
            let mut out = Vec::with_capacity(times.len());
            for &t in &times {
                while chain.time() < t {
                    chain.step_with(&mut rng);
                }
                out.push(chain.frobenius_to_delta().powi(2));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mean = mean_paths(paths);
    let floor = params.m as f64 / params.n as f64 * clt_covariance(params)?.trace();
    let excess: Vec<f64> = mean.iter().map(|v| v - floor).collect();
    let (slope, used) = fit_log_slope(&times, &excess, cfg.fit_floor);
    let predicted = 1.0 / (xi * params.n as f64);
    Ok(DecayFit {
        times,
        mean,
        floor,
        points_used: used,
        rate: -slope,
        predicted_rate: predicted,
        rate_relative_error: (-slope - predicted).abs() / predicted,
    })
}
