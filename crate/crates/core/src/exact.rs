//! Exact computations on small systems: the lumped state space, its transition matrix
//! and Gibbs law, TV distances, mixing times and one-step laws.
//!
//! TV distances here are between laws of the count matrix. Since the counts are a
//! function of the configuration, they bound the configuration-level distance from below.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{frobenius_sq_to_delta, move_stays_inside};
use crate::error::{PottsError, Result};
use crate::io::{fmt_f64, matrix_headers};
use crate::model::{hamiltonian_counts, heat_bath_distribution, Configuration, CountMatrix, HeatBathMode, ModelParams};

pub const DEFAULT_STATE_CAP: u128 = 1_000_000;
const DENSE_LIMIT: usize = 10_000;

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// `C(n/m + q - 1, q - 1)^m`, saturating.
pub fn state_count(n: usize, m: usize, q: usize) -> u128 {
    let per_block = binomial((n / m + q - 1) as u128, (q - 1) as u128);
    (0..m).fold(1u128, |acc, _| acc.saturating_mul(per_block))
}

/// Compositions of `total` into `q` non-negative parts, lexicographically ascending.
fn compositions(total: u32, q: usize) -> Vec<Vec<u32>> {
    fn rec(rest: u32, left: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 1 {
            cur.push(rest);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for x in 0..=rest {
            cur.push(x);
            rec(rest - x, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(total, q, &mut Vec::with_capacity(q), &mut out);
    out
}

/// All count matrices for `(n, m, q)`, in ascending lexicographic order of the row-major
/// entries, with their configuration multiplicities.
#[derive(Clone, Debug)]
pub struct LumpedStateSpace {
    n: usize,
    m: usize,
    q: usize,
    states: Vec<CountMatrix>,
    index: HashMap<CountMatrix, usize>,
    log_multiplicity: Vec<f64>,
}

pub fn enumerate_states(n: usize, m: usize, q: usize) -> Result<LumpedStateSpace> {
    enumerate_states_capped(n, m, q, DEFAULT_STATE_CAP)
}

pub fn enumerate_states_capped(n: usize, m: usize, q: usize, cap: u128) -> Result<LumpedStateSpace> {
    if m == 0 || q < 2 || n == 0 || n % m != 0 {
        return Err(PottsError::InvalidParameter(format!(
            "cannot enumerate states for n = {n}, m = {m}, q = {q}"
        )));
    }
    let count = state_count(n, m, q);
    if count > cap {
        return Err(PottsError::CapExceeded { states: count, cap });
    }
    let bs = n / m;
    let rows = compositions(bs as u32, q);
    let mut ln_fact = vec![0.0f64; bs + 1];
    for k in 1..=bs {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let row_log_mult: Vec<f64> = rows
        .iter()
        .map(|r| ln_fact[bs] - r.iter().map(|&c| ln_fact[c as usize]).sum::<f64>())
        .collect();
    let mut states = Vec::with_capacity(count as usize);
    let mut log_multiplicity = Vec::with_capacity(count as usize);
    let mut digits = vec![0usize; m];
    loop {
        let mut flat = Vec::with_capacity(m * q);
        for &d in &digits {
            flat.extend_from_slice(&rows[d]);
        }
        states.push(CountMatrix::new(m, q, flat)?);
        log_multiplicity.push(digits.iter().map(|&d| row_log_mult[d]).sum());
        // odometer with the last block fastest, which keeps lexicographic order
        let mut pos = m;
        loop {
            if pos == 0 {
                let index = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
                return Ok(LumpedStateSpace {
                    n,
                    m,
                    q,
                    states,
                    index,
                    log_multiplicity,
                });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < rows.len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

impl LumpedStateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> &[CountMatrix] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &CountMatrix {
        &self.states[i]
    }

    pub fn index_of(&self, s: &CountMatrix) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Number of configurations with these counts, `prod_i multinomial(n/m; N_i*)`.
    pub fn multiplicity(&self, i: usize) -> f64 {
        self.log_multiplicity[i].exp()
    }

    pub fn log_multiplicity(&self, i: usize) -> f64 {
        self.log_multiplicity[i]
    }

    /// `ln(multiplicity) - beta H`, unnormalized.
    pub fn log_gibbs_weight(&self, i: usize, params: &ModelParams) -> f64 {
        self.log_multiplicity[i] - params.beta * hamiltonian_counts(&self.states[i], params)
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        if (params.n, params.m, params.q) != (self.n, self.m, self.q) {
            return Err(PottsError::InvalidInput("state space was built for other (n, m, q)".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W, params: &ModelParams, pi: Option<&[f64]>) -> Result<()> {
        self.check(params)?;
        let mut header = vec!["index".to_string()];
        header.extend(matrix_headers("N", self.m, self.q));
        header.push("multiplicity".into());
        header.push("energy".into());
        if pi.is_some() {
            header.push("pi".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for (i, s) in self.states.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(s.as_slice().iter().map(|c| c.to_string()));
            row.push(fmt_f64(self.multiplicity(i)));
            row.push(fmt_f64(hamiltonian_counts(s, params)));
            if let Some(p) = pi {
                row.push(fmt_f64(p[i]));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Row-stochastic lumped kernel in sparse row form, with its Gibbs law.
#[derive(Clone, Debug)]
pub struct ExactKernel {
    rows: Vec<Vec<(usize, f64)>>,
    stationary: Vec<f64>,
}

/// One-step law of the lumped chain from `state`, as `(successor, probability)` sorted by
/// successor. With `rho`, moves leaving `{||S - Delta||_F < rho}` become holds.
pub fn one_step_law_counts(state: &CountMatrix, params: &ModelParams, rho: Option<f64>) -> Result<Vec<(CountMatrix, f64)>> {
    if !state.fits(params) {
        return Err(PottsError::InvalidInput("state does not match the model parameters".into()));
    }
    if let Some(r) = rho {
        if !(frobenius_sq_to_delta(state).sqrt() < r) {
            return Err(PottsError::InvalidStart("state lies outside the ball".into()));
        }
    }
    let (m, q, bs) = (params.m, params.q, params.block_size());
    let mut law: HashMap<CountMatrix, f64> = HashMap::new();
    for i in 0..m {
        for j in 0..q {
            let nij = state.get(i, j);
            if nij == 0 {
                continue;
            }
            let w = nij as f64 / (m * bs) as f64;
            let p = heat_bath_distribution(state, i, j, params, HeatBathMode::Exact)?;
            for (k, &pk) in p.iter().enumerate() {
                let stays = rho.map_or(true, |r| move_stays_inside(state, i, j, k, r));
                let mut next = state.clone();
                if stays {
                    next.apply_move(i, j, k);
                }
                *law.entry(next).or_insert(0.0) += w * pk;
            }
        }
    }
    let mut out: Vec<_> = law.into_iter().collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// One-step law of the full-configuration chain from `config`, sorted by successor.
pub fn one_step_law_config(config: &Configuration, params: &ModelParams, rho: Option<f64>) -> Result<Vec<(Configuration, f64)>> {
    if !config.fits(params) {
        return Err(PottsError::InvalidInput("configuration does not match the model parameters".into()));
    }
    let counts = config.counts();
    if let Some(r) = rho {
        if !(frobenius_sq_to_delta(&counts).sqrt() < r) {
            return Err(PottsError::InvalidStart("state lies outside the ball".into()));
        }
    }
    let (n, bs) = (params.n, params.block_size());
    let mut law: HashMap<Configuration, f64> = HashMap::new();
    for v in 0..n {
        let (i, j) = (v / bs, config.color(v));
        let p = heat_bath_distribution(&counts, i, j, params, HeatBathMode::Exact)?;
        for (k, &pk) in p.iter().enumerate() {
            let stays = rho.map_or(true, |r| move_stays_inside(&counts, i, j, k, r));
            let mut next = config.clone();
            if stays {
                next.set_color(v, k);
            }
            *law.entry(next).or_insert(0.0) += pk / n as f64;
        }
    }
    let mut out: Vec<_> = law.into_iter().collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

pub fn stationary_distribution(space: &LumpedStateSpace, params: &ModelParams) -> Result<Vec<f64>> {
    space.check(params)?;
    let lw: Vec<f64> = (0..space.len()).map(|i| space.log_gibbs_weight(i, params)).collect();
    let mx = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

pub fn transition_matrix(space: &LumpedStateSpace, params: &ModelParams) -> Result<ExactKernel> {
    space.check(params)?;
    let rows = space
        .states()
        .par_iter()
        .map(|s| {
            let law = one_step_law_counts(s, params, None)?;
            let mut row: Vec<(usize, f64)> = law
                .into_iter()
                .map(|(t, p)| (space.index_of(&t).expect("successor is in the state space"), p))
                .collect();
            row.sort_by_key(|e| e.0);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExactKernel {
        rows,
        stationary: stationary_distribution(space, params)?,
    })
}

impl ExactKernel {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |k| self.rows[i][k].1)
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Dense copy; only for at most 10^4 states.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let k = self.len();
        if k > DENSE_LIMIT {
            return Err(PottsError::CapExceeded {
                states: k as u128,
                cap: DENSE_LIMIT as u128,
            });
        }
        let mut d = DMatrix::zeros(k, k);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                d[(i, j)] = p;
            }
        }
        Ok(d)
    }

    /// `p P` for a row vector `p`.
    pub fn apply_left(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, row) in self.rows.iter().enumerate() {
            if p[i] == 0.0 {
                continue;
            }
            for &(j, w) in row {
                out[j] += p[i] * w;
            }
        }
        out
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|e| e.1).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max |pi(s) P(s, t) - pi(t) P(t, s)|`.
    pub fn detailed_balance_residual(&self) -> f64 {
        let pi = &self.stationary;
        let mut worst = 0.0f64;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                worst = worst.max((pi[i] * p - pi[j] * self.entry(j, i)).abs());
            }
        }
        worst
    }
}

pub fn tv_distance(p: &[f64], r: &[f64]) -> Result<f64> {
    if p.len() != r.len() {
        return Err(PottsError::InvalidInput("length mismatch".into()));
    }
    for v in [p, r] {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-9 || v.iter().any(|&x| x < 0.0) {
            return Err(PottsError::InvalidInput(format!("not a probability vector (sum {s})")));
        }
    }
    Ok(0.5 * p.iter().zip(r).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingTime {
    pub epsilon: f64,
    /// First `t` with worst-start TV at most `epsilon`; `None` if not reached by `max_t`.
    pub t: Option<u64>,
    /// Worst-start TV at `t = 0, 1, ...` up to the stopping time.
    pub worst_tv: Vec<f64>,
}

/// `min { t : max_s TV(P^t(s, .), pi) <= epsilon }`, evolving every start for at most
/// `max_t` steps.
pub fn mixing_time_exact(kernel: &ExactKernel, epsilon: f64, max_t: u64) -> MixingTime {
    let k = kernel.len();
    let pi = kernel.stationary();
    let mut dists: Vec<Vec<f64>> = (0..k)
        .map(|s| {
            let mut d = vec![0.0; k];
            d[s] = 1.0;
            d
        })
        .collect();
    let worst = |ds: &[Vec<f64>]| {
        ds.iter()
            .map(|d| 0.5 * d.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let mut worst_tv = vec![worst(&dists)];
    let mut t = 0;
    while worst_tv[t as usize] > epsilon {
        if t >= max_t {
            return MixingTime {
                epsilon,
                t: None,
                worst_tv,
            };
        }
        for d in dists.iter_mut() {
            *d = kernel.apply_left(d);
        }
        worst_tv.push(worst(&dists));
        t += 1;
    }
    MixingTime {
        epsilon,
        t: Some(t),
        worst_tv,
    }
}

/// Largest difference between the lumped kernel and the full-configuration kernel
/// projected onto counts, over every configuration. Needs `q^n <= cap`.
pub fn lumping_defect(params: &ModelParams, cap: u128) -> Result<f64> {
    let total = (params.q as u128).checked_pow(params.n as u32).unwrap_or(u128::MAX);
    if total > cap {
        return Err(PottsError::CapExceeded { states: total, cap });
    }
    let mut colors = vec![0u8; params.n];
    let mut worst = 0.0f64;
    loop {
        let config = Configuration::new(params.m, params.q, colors.clone())?;
        let lumped = one_step_law_counts(&config.counts(), params, None)?;
        let mut projected: HashMap<CountMatrix, f64> = HashMap::new();
        for (c, p) in one_step_law_config(&config, params, None)? {
            *projected.entry(c.counts()).or_insert(0.0) += p;
        }
        for (s, p) in &lumped {
            worst = worst.max((p - projected.remove(s).unwrap_or(0.0)).abs());
        }
        for p in projected.values() {
            worst = worst.max(p.abs());
        }
        let mut pos = 0;
        loop {
            if pos == params.n {
                return Ok(worst);
            }
            colors[pos] += 1;
            if (colors[pos] as usize) < params.q {
                break;
            }
            colors[pos] = 0;
            pos += 1;
        }
    }
}

/// Stationary mass within Frobenius distance `radius` of `Delta`.
pub fn mass_near_delta(space: &LumpedStateSpace, pi: &[f64], radius: f64) -> f64 {
    space
        .states()
        .iter()
        .zip(pi)
        .filter(|(s, _)| frobenius_sq_to_delta(s).sqrt() <= radius)
        .map(|(_, p)| p)
        .sum()
}

/// Writes the kernel as `from,to,p` triples.
pub fn write_kernel_csv<W: Write>(kernel: &ExactKernel, w: &mut W) -> Result<()> {
    writeln!(w, "from,to,p")?;
    for (i, row) in kernel.rows.iter().enumerate() {
        for &(j, p) in row {
            writeln!(w, "{i},{j},{}", fmt_f64(p))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_state_counts() {
        assert_eq!(enumerate_states(2, 1, 2).unwrap().len(), 3);
        assert_eq!(enumerate_states(6, 2, 3).unwrap().len(), 100);
        assert_eq!(state_count(6, 2, 3), 100);
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let s = enumerate_states(4, 2, 2).unwrap();
        for w in s.states().windows(2) {
            assert!(w[0].as_slice() < w[1].as_slice());
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            enumerate_states_capped(60, 2, 3, 1000),
            Err(PottsError::CapExceeded { .. })
        ));
    }
}
