//! Numerical checks of the high-temperature inequalities and of the CLT covariance.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{init_chain_with, Mode, Start};
use crate::error::{PottsError, Result};
use crate::exact::{enumerate_states, stationary_distribution};
use crate::io::fmt_f64;
use crate::model::ModelParams;
use crate::rng::{replica_rng, PottsRng};
use crate::theory::{
    aggregate_g_variation_line, clt_covariance, local_lipschitz_ratio, random_simplex_point,
    verify_g_upper_bound,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryCheckConfig {
    pub params: ModelParams,
    /// Random simplex points for the `g` bound and the path functional.
    pub samples: usize,
    #[serde(default = "default_path_steps")]
    pub path_steps: usize,
    #[serde(default = "default_radius")]
    pub lipschitz_radius: f64,
    #[serde(default = "default_lipschitz_samples")]
    pub lipschitz_samples: usize,
    /// Empirical covariance of `sqrt(n/m)(S - Delta)` at `params.n`; skipped when absent.
    #[serde(default)]
    pub clt: Option<CltConfig>,
}

fn default_path_steps() -> usize {
    32
}

fn default_radius() -> f64 {
    1e-3
}

fn default_lipschitz_samples() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltConfig {
    pub samples: usize,
    /// Steps between samples, in units of `n`.
    #[serde(default = "default_thin")]
    pub thin: f64,
    /// Steps before the first sample, in units of `n`.
    #[serde(default = "default_clt_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_thin() -> f64 {
    2.0
}

fn default_clt_burn_in() -> f64 {
    10.0
}

fn default_tolerance() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    OutOfRegime,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubCheck {
    pub name: String,
    pub status: CheckStatus,
    /// Distance to the failure boundary; negative when failing.
    pub worst_margin: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryReport {
    pub checks: Vec<SubCheck>,
}

impl TheoryReport {
    pub fn get(&self, name: &str) -> Option<&SubCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "check,status,worst_margin,detail")?;
        for c in &self.checks {
            writeln!(
                w,
                "{},{:?},{},\"{}\"",
                c.name,
                c.status,
                fmt_f64(c.worst_margin),
                c.detail.replace('"', "'")
            )?;
        }
        Ok(())
    }
}

fn sub(name: &str, passed: bool, margin: f64, detail: String) -> SubCheck {
    SubCheck {
        name: name.into(),
        status: if passed { CheckStatus::Pass } else { CheckStatus::Fail },
        worst_margin: margin,
        detail,
    }
}

fn out_of_regime(name: &str, e: PottsError) -> Result<SubCheck> {
    match e {
        PottsError::OutOfRegime(msg) => Ok(SubCheck {
            name: name.into(),
            status: CheckStatus::OutOfRegime,
            worst_margin: f64::NAN,
            detail: msg,
        }),
        e => Err(e),
    }
}

/// Worst ratio of the aggregate `g`-variation along the segment from `Delta` over the same
/// random points used for the `g` bound.
fn path_check(params: &ModelParams, samples: usize, steps: usize, seed: u64) -> Result<SubCheck> {
    let mut rng: PottsRng = replica_rng(seed, 0);
    let mut worst = 0.0f64;
    let mut worst_refinement = 0.0f64;
    for _ in 0..samples {
        let z = random_simplex_point(params.m, params.q, &mut rng);
        let r = aggregate_g_variation_line(&z, params, steps)?;
        worst = worst.max(r.ratio);
        worst_refinement = worst_refinement.max(r.refinement_change);
    }
    Ok(sub(
        "aggregate_g_variation",
        worst < 1.0,
        1.0 - worst,
        format!("max ratio {worst:.6} over {samples} points, max refinement change {worst_refinement:.2e}"),
    ))
}

/// Sample covariance of `sqrt(n/m)(S - Delta)` from a long lumped run.
pub fn empirical_clt_covariance(params: &ModelParams, clt: &CltConfig, seed: u64) -> Result<DMatrix<f64>> {
    let mq = params.m * params.q;
    let mut rng = replica_rng(seed, 0);
    let mut chain = init_chain_with(params, &Start::DeltaNearest, Mode::Lumped, &mut rng)?;
    let n = params.n as f64;
    let (burn, thin) = ((clt.burn_in * n).ceil() as u64, (clt.thin * n).ceil().max(1.0) as u64);
    for _ in 0..burn {
        chain.step_with(&mut rng);
    }
    let scale = (n / params.m as f64).sqrt();
    let qf = params.q as f64;
    let mut sum = vec![0.0; mq];
    let mut outer = DMatrix::<f64>::zeros(mq, mq);
    for _ in 0..clt.samples {
        for _ in 0..thin {
            chain.step_with(&mut rng);
        }
        let x: Vec<f64> = chain.proportions().as_slice().iter().map(|s| scale * (s - 1.0 / qf)).collect();
        for a in 0..mq {
            sum[a] += x[a];
            for b in 0..mq {
                outer[(a, b)] += x[a] * x[b];
            }
        }
    }
    let k = clt.samples as f64;
    Ok(DMatrix::from_fn(mq, mq, |a, b| (outer[(a, b)] - sum[a] * sum[b] / k) / (k - 1.0)))
}

/// Covariance of `sqrt(n/m)(S - Delta)` under the exact Gibbs law (small `n`).
pub fn exact_clt_covariance(params: &ModelParams) -> Result<DMatrix<f64>> {
    let space = enumerate_states(params.n, params.m, params.q)?;
    let pi = stationary_distribution(&space, params)?;
    let mq = params.m * params.q;
    let scale = (params.n as f64 / params.m as f64).sqrt();
    let qf = params.q as f64;
    let mut cov = DMatrix::<f64>::zeros(mq, mq);
    for (s, p) in space.states().iter().zip(&pi) {
        let x: Vec<f64> = s.proportions().as_slice().iter().map(|v| scale * (v - 1.0 / qf)).collect();
        for a in 0..mq {
            for b in 0..mq {
                cov[(a, b)] += p * x[a] * x[b];
            }
        }
    }
    Ok(cov)
}

fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn theory_check(cfg: &TheoryCheckConfig, seed: u64) -> Result<TheoryReport> {
    let params = &cfg.params;
    params.validate()?;
    let mut checks = Vec::new();
    match verify_g_upper_bound(params, cfg.samples, seed) {
        Ok(r) => checks.push(sub(
            "g_upper_bound",
            r.violations == 0,
            -r.max_slack,
            format!(
                "{} violations among {} qualifying of {} points",
                r.violations, r.qualifying_samples, r.samples
            ),
        )),
        Err(e) => checks.push(out_of_regime("g_upper_bound", e)?),
    }
    let ct = crate::theory::critical_temperatures(params.q)?;
    if params.beta_j() < ct.beta_s {
        checks.push(path_check(params, cfg.samples, cfg.path_steps, seed)?);
    } else {
        checks.push(out_of_regime(
            "aggregate_g_variation",
            PottsError::OutOfRegime("needs beta < beta_s/J".into()),
        )?);
    }
    let bound = 2.0 * params.beta_j() / params.q as f64;
    let lip = local_lipschitz_ratio(params, cfg.lipschitz_radius, cfg.lipschitz_samples, seed);
    checks.push(sub(
        "local_lipschitz",
        lip <= bound + 1e-2,
        bound + 1e-2 - lip,
        format!("max ratio {lip:.6} vs 2betaJ/q = {bound:.6}"),
    ));
    if let Some(clt) = &cfg.clt {
        match clt_covariance(params) {
            Ok(lambda) => {
                let exact_small = crate::exact::state_count(params.n, params.m, params.q) <= 100_000;
                let (emp, how) = if exact_small {
                    (exact_clt_covariance(params)?, "exact Gibbs law")
                } else {
                    (empirical_clt_covariance(params, clt, seed)?, "thinned lumped run")
                };
                let err = relative_frobenius(&emp, &lambda);
                checks.push(sub(
                    "clt_covariance",
                    err <= clt.tolerance,
                    clt.tolerance - err,
                    format!("relative Frobenius error {err:.4} ({how}, n = {})", params.n),
                ));
            }
            Err(e) => checks.push(out_of_regime("clt_covariance", e)?),
        }
    }
    Ok(TheoryReport { checks })
}
