//! The six-stage coupling that takes two arbitrary starts to basket coalescence.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::basket::{basketwise_step, Basket, BasketPair};
use super::steps::{coordinatewise_run, greedy_step, independent_step, synchronized_step, Pair};
use crate::dynamics::Chain;
use crate::error::{PottsError, Result};
use crate::io::{fmt_f64, fmt_opt_u64};
use crate::model::{Configuration, ModelParams};
use crate::rng::Draw;
use crate::theory::xi_and_cutoff_time;

/// Stage lengths in units of `n`. Stages 1 and 2 always run their full length; stages 4
/// to 6 stop early once their goal is met, and `gamma4` caps each coordinatewise stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverallBudgets {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma4: f64,
    pub gamma5: f64,
    pub gamma6: f64,
}

impl Default for OverallBudgets {
    fn default() -> Self {
        OverallBudgets {
            gamma1: 0.25,
            gamma2: 0.25,
            gamma4: 8.0,
            gamma5: 16.0,
            gamma6: 16.0,
        }
    }
}

impl OverallBudgets {
    fn steps(g: f64, n: usize) -> u64 {
        (g * n as f64).ceil().max(0.0) as u64
    }
}

/// Coordinatewise thresholds `y_k = 16 m`: column sums may differ by up to 16 vertices.
/// Tighter thresholds lengthen stage 4 without shortening stage 5.
pub fn default_thresholds(params: &ModelParams) -> Vec<f64> {
    vec![16.0 * params.m as f64; params.q - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingRun {
    pub kind: String,
    pub n: usize,
    pub beta: f64,
    /// End times `t^(1) .. t^(6)` of the stages.
    pub boundaries: [u64; 6],
    pub stage_times: Vec<Option<u64>>,
    pub t_cc: Option<u64>,
    pub h_u: f64,
    pub h_r: f64,
    /// First time the count matrices agree.
    pub coalesce_s_time: Option<u64>,
    /// Time at which every basket had equal color counts in both chains.
    pub coalesce_basket_time: Option<u64>,
    /// First time the configurations agree.
    pub coalesce_config_time: Option<u64>,
    pub lambda: f64,
    pub success: bool,
}

impl CouplingRun {
    pub const CSV_HEADER: &'static str = "replica,kind,n,beta,t1,t2,t3,t4,t5,t6,T_CC,h_u,h_r,coalesce_S_time,coalesce_basket_time,coalesce_config_time,lambda,success";

    pub fn write_csv_row<W: Write>(&self, w: &mut W, replica: u64) -> std::io::Result<()> {
        let b = &self.boundaries;
        writeln!(
            w,
            "{replica},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.kind,
            self.n,
            fmt_f64(self.beta),
            b[0],
            b[1],
            b[2],
            b[3],
            b[4],
            b[5],
            fmt_opt_u64(self.t_cc),
            fmt_f64(self.h_u),
            fmt_f64(self.h_r),
            fmt_opt_u64(self.coalesce_s_time),
            fmt_opt_u64(self.coalesce_basket_time),
            fmt_opt_u64(self.coalesce_config_time),
            fmt_f64(self.lambda),
            self.success
        )
    }

    /// Whether the chains were basket-coalesced by time `t`.
    pub fn coalesced_by(&self, t: f64) -> bool {
        self.coalesce_basket_time.is_some_and(|c| c as f64 <= t)
    }
}

struct Recorder {
    s_time: Option<u64>,
    config_time: Option<u64>,
}

impl Recorder {
    fn see(&mut self, pair: &Pair) {
        if self.s_time.is_none() && pair.counts_equal() {
            self.s_time = Some(pair.time());
        }
        if self.config_time.is_none() && pair.configs_equal() {
            self.config_time = Some(pair.time());
        }
    }
}

/// Runs the staged schedule from `(sigma0, sigma0_tilde)`:
/// 1. independent steps to `t1 = gamma1 n`;
/// 2. greedy steps to `t2 = t1 + gamma2 n`, after which baskets are the colors of `sigma`;
/// 3. independent steps to `t3 = t2 + t_xi(n)`;
/// 4. coordinatewise stages with thresholds `y`, each capped at `gamma4 n`;
/// 5. synchronized steps (no ball restriction) until the counts agree, at most `gamma5 n`;
/// 6. basketwise steps until every basket agrees, at most `gamma6 n`.
///
/// Stage 6 only runs when stage 5 ended with equal counts. Requires `betaJ < q/2` so
/// that `t_xi` exists.
pub fn overall_coupling_run<D: Draw>(
    sigma0: Configuration,
    sigma0_tilde: Configuration,
    params: &ModelParams,
    budgets: &OverallBudgets,
    y: &[f64],
    draw: &mut D,
) -> Result<CouplingRun> {
    let (_, t_xi) = xi_and_cutoff_time(params)?;
    let n = params.n;
    let x = Chain::from_config(params, sigma0)?;
    let yc = Chain::from_config(params, sigma0_tilde)?;
    let mut pair = Pair::new(x, yc)?;
    let mut run = CouplingRun {
        kind: "overall".into(),
        n,
        beta: params.beta,
        boundaries: [0; 6],
        stage_times: vec![None; params.q - 1],
        t_cc: None,
        h_u: f64::NAN,
        h_r: f64::NAN,
        coalesce_s_time: None,
        coalesce_basket_time: None,
        coalesce_config_time: None,
        lambda: f64::NAN,
        success: false,
    };
    if y.len() != params.q - 1 {
        return Err(PottsError::InvalidParameter(format!("need {} thresholds", params.q - 1)));
    }
    if pair.configs_equal() {
        run.coalesce_s_time = Some(0);
        run.coalesce_basket_time = Some(0);
        run.coalesce_config_time = Some(0);
        run.stage_times = vec![Some(0); params.q - 1];
        run.t_cc = Some(0);
        run.h_u = 0.0;
        run.h_r = (n as f64).sqrt() * pair.x().frobenius_to_delta();
        run.success = true;
        return Ok(run);
    }
    let mut rec = Recorder {
        s_time: None,
        config_time: None,
    };
    rec.see(&pair);

    for _ in 0..OverallBudgets::steps(budgets.gamma1, n) {
        independent_step(&mut pair, draw);
        rec.see(&pair);
    }
    run.boundaries[0] = pair.time();

    for _ in 0..OverallBudgets::steps(budgets.gamma2, n) {
        greedy_step(&mut pair, draw);
        rec.see(&pair);
    }
    run.boundaries[1] = pair.time();
    let basket = Basket::from_config(pair.x().config().expect("full mode"));
    run.lambda = basket.lambda();

    for _ in 0..t_xi.ceil() as u64 {
        independent_step(&mut pair, draw);
        rec.see(&pair);
    }
    run.boundaries[2] = pair.time();

    let report = coordinatewise_run(&mut pair, y, OverallBudgets::steps(budgets.gamma4, n), draw)?;
    rec.see(&pair);
    run.boundaries[3] = pair.time();
    run.stage_times = report.stage_times;
    run.t_cc = report.t_cc;
    run.h_u = report.u_measured;
    run.h_r = report.r_measured;

    let cap5 = OverallBudgets::steps(budgets.gamma5, n);
    let mut steps = 0;
    while !pair.counts_equal() && steps < cap5 {
        synchronized_step(&mut pair, f64::INFINITY, draw)?;
        rec.see(&pair);
        steps += 1;
    }
    run.boundaries[4] = pair.time();

    if pair.counts_equal() {
        let mut bp = BasketPair::new(pair, basket)?;
        let cap6 = OverallBudgets::steps(budgets.gamma6, n);
        let mut steps = 0;
        while !bp.coalesced() && steps < cap6 {
            basketwise_step(&mut bp, draw);
            rec.see(bp.pair());
            steps += 1;
        }
        if bp.coalesced() {
            run.coalesce_basket_time = Some(bp.pair().time());
            run.success = true;
        }
        run.boundaries[5] = bp.pair().time();
    } else {
        run.boundaries[5] = run.boundaries[4];
    }
    run.coalesce_s_time = rec.s_time;
    run.coalesce_config_time = rec.config_time;
    Ok(run)
}
