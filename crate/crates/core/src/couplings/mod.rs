//! Couplings of two Glauber chains.
//!
//! Sampling primitives ([`optimal_coupling_sample`], [`semi_independent_sample`]) come
//! with their exact joint laws. The chain couplings live in [`steps`] (greedy,
//! synchronized, coordinatewise), [`basket`] (basketwise) and [`overall`] (the staged
//! schedule).

pub mod basket;
pub mod overall;
pub mod steps;

pub use basket::{basketwise_run, basketwise_step, Basket, BasketPair, BasketReport};
pub use overall::{default_thresholds, overall_coupling_run, CouplingRun, OverallBudgets};
pub use steps::{
    column_gap_within, coordinatewise_run, coordinatewise_step, greedy_step, independent_step,
    synchronized_step, CoordinatewiseReport, Pair,
};

use serde::Serialize;

use crate::error::{PottsError, Result};
use crate::rng::Draw;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DiscreteCouplingSample {
    pub x: usize,
    pub y: usize,
    pub diag: bool,
}

impl DiscreteCouplingSample {
    fn new(x: usize, y: usize) -> Self {
        DiscreteCouplingSample { x, y, diag: x == y }
    }
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (s - 1.0).abs() > 1e-9 {
        return Err(PottsError::InvalidInput(format!(
            "{name} is not a normalized distribution (sum {s})"
        )));
    }
    Ok(())
}

/// Total variation distance `(1/2) sum |mu - nu|`.
pub fn total_variation(mu: &[f64], nu: &[f64]) -> f64 {
    0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Optimal coupling of two normalized vectors: with probability `sum min(mu, nu)` both
/// take a common value drawn from the overlap, otherwise they are drawn independently
/// from the normalized residuals. Every draw scans outcomes in ascending index order.
pub(crate) fn optimal_pair<D: Draw>(mu: &[f64], nu: &[f64], draw: &mut D) -> (usize, usize) {
    let overlap: Vec<f64> = mu.iter().zip(nu).map(|(a, b)| a.min(*b)).collect();
    let ov: f64 = overlap.iter().sum();
    let rx: Vec<f64> = mu.iter().zip(&overlap).map(|(a, w)| (a - w).max(0.0)).collect();
    let ry: Vec<f64> = nu.iter().zip(&overlap).map(|(b, w)| (b - w).max(0.0)).collect();
    let r: f64 = rx.iter().sum::<f64>().min(ry.iter().sum());
    let on_diagonal = if r <= 0.0 {
        true
    } else if ov <= 0.0 {
        false
    } else {
        draw.categorical(&[ov, r]) == 0
    };
    if on_diagonal {
        let x = draw.categorical(&overlap);
        (x, x)
    } else {
        (draw.categorical(&rx), draw.categorical(&ry))
    }
}

pub fn optimal_coupling_sample<D: Draw>(
    mu: &[f64],
    nu: &[f64],
    draw: &mut D,
) -> Result<DiscreteCouplingSample> {
    check_distribution(mu, "mu")?;
    check_distribution(nu, "nu")?;
    if mu.len() != nu.len() {
        return Err(PottsError::InvalidInput("length mismatch".into()));
    }
    let (x, y) = optimal_pair(mu, nu, draw);
    Ok(DiscreteCouplingSample::new(x, y))
}

/// Joint law of [`optimal_coupling_sample`], row-major `len x len`.
pub fn optimal_coupling_law(mu: &[f64], nu: &[f64]) -> Vec<f64> {
    let k = mu.len();
    let mut joint = vec![0.0; k * k];
    let w: Vec<f64> = mu.iter().zip(nu).map(|(a, b)| a.min(*b)).collect();
    let rx: Vec<f64> = mu.iter().zip(&w).map(|(a, w)| (a - w).max(0.0)).collect();
    let ry: Vec<f64> = nu.iter().zip(&w).map(|(b, w)| (b - w).max(0.0)).collect();
    let (sx, sy): (f64, f64) = (rx.iter().sum(), ry.iter().sum());
    let r = sx.min(sy);
    for x in 0..k {
        joint[x * k + x] += w[x];
        if r > 0.0 {
            for y in 0..k {
                joint[x * k + y] += r * (rx[x] / sx) * (ry[y] / sy);
            }
        }
    }
    joint
}

fn restricted(p: &[f64], a: &[bool], inside: bool) -> Vec<f64> {
    p.iter()
        .zip(a)
        .map(|(&x, &in_a)| if in_a == inside { x } else { 0.0 })
        .collect()
}

/// Branch weights of the semi-independent construction, i.e. the lengths of the pieces
/// of `[0, 1]` in which the shared uniform `U` lands:
/// `U <= mu(A) ^ nu(A)` (optimal on `A`), `X in A` only, `X~ in A` only, neither.
fn semi_branches(mu: &[f64], nu: &[f64], a: &[bool]) -> [f64; 4] {
    let am: f64 = restricted(mu, a, true).iter().sum();
    let an: f64 = restricted(nu, a, true).iter().sum();
    let cm: f64 = restricted(mu, a, false).iter().sum();
    let cn: f64 = restricted(nu, a, false).iter().sum();
    let c = am.min(an);
    // a branch is only possible when its target sets carry mass
    let x_only = if cn > 0.0 { (am - an).max(0.0) } else { 0.0 };
    let y_only = if cm > 0.0 { (an - am).max(0.0) } else { 0.0 };
    [c, x_only, y_only, cm.min(cn)]
}

pub(crate) fn semi_independent_pair<D: Draw>(
    mu: &[f64],
    nu: &[f64],
    a: &[bool],
    draw: &mut D,
) -> (usize, usize) {
    let branches = semi_branches(mu, nu, a);
    match draw.categorical(&branches) {
        0 => {
            let ma = restricted(mu, a, true);
            let na = restricted(nu, a, true);
            let (sm, sn): (f64, f64) = (ma.iter().sum(), na.iter().sum());
            let ma: Vec<f64> = ma.iter().map(|x| x / sm).collect();
            let na: Vec<f64> = na.iter().map(|x| x / sn).collect();
            optimal_pair(&ma, &na, draw)
        }
        1 => (
            draw.categorical(&restricted(mu, a, true)),
            draw.categorical(&restricted(nu, a, false)),
        ),
        2 => (
            draw.categorical(&restricted(mu, a, false)),
            draw.categorical(&restricted(nu, a, true)),
        ),
        _ => (
            draw.categorical(&restricted(mu, a, false)),
            draw.categorical(&restricted(nu, a, false)),
        ),
    }
}

/// `A`-semi-independent coupling: one shared uniform `U`; if `U <= mu(A) ^ nu(A)` draw
/// from the optimal coupling of `mu|_A, nu|_A`, otherwise draw `X` from `mu|_A` when
/// `U < mu(A)` and from `mu|_{A^c}` otherwise, and `X~` likewise, independently.
/// `a[k]` marks membership of outcome `k` in `A`.
pub fn semi_independent_sample<D: Draw>(
    mu: &[f64],
    nu: &[f64],
    a: &[bool],
    draw: &mut D,
) -> Result<DiscreteCouplingSample> {
    check_distribution(mu, "mu")?;
    check_distribution(nu, "nu")?;
    if mu.len() != nu.len() || a.len() != mu.len() {
        return Err(PottsError::InvalidInput("length mismatch".into()));
    }
    if !a.iter().any(|&x| x) {
        return Err(PottsError::InvalidInput("the subset A is empty".into()));
    }
    let (x, y) = semi_independent_pair(mu, nu, a, draw);
    Ok(DiscreteCouplingSample::new(x, y))
}

/// Joint law of [`semi_independent_sample`], row-major `len x len`.
pub fn semi_independent_law(mu: &[f64], nu: &[f64], a: &[bool]) -> Vec<f64> {
    let k = mu.len();
    let [c, x_only, y_only, neither] = semi_branches(mu, nu, a);
    let norm = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            v.iter().map(|x| x / s).collect()
        } else {
            v
        }
    };
    let (ma, mc) = (norm(restricted(mu, a, true)), norm(restricted(mu, a, false)));
    let (na, nc) = (norm(restricted(nu, a, true)), norm(restricted(nu, a, false)));
    let mut joint = vec![0.0; k * k];
    if c > 0.0 {
        for (j, p) in joint.iter_mut().zip(optimal_coupling_law(&ma, &na)) {
            *j += c * p;
        }
    }
    for (w, xs, ys) in [(x_only, &ma, &nc), (y_only, &mc, &na), (neither, &mc, &nc)] {
        if w > 0.0 {
            for x in 0..k {
                for y in 0..k {
                    joint[x * k + y] += w * xs[x] * ys[y];
                }
            }
        }
    }
    joint
}
