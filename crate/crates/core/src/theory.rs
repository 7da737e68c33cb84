//! Closed-form constants and numerical solvers: critical temperatures, the spinodal
//! drift `D`, cutoff constants, equilibrium macrostates, the rate function, the
//! aggregate g-variation along straight lines, the g upper bound and the CLT covariance.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{PottsError, Result};
use crate::model::{
    update_distribution, update_distribution_derivative, ModelParams, ProportionMatrix,
};
use crate::rng::{replica_rng, PottsRng};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalTemperatures {
    pub q: usize,
    pub beta_c: f64,
    pub beta_s: f64,
}

impl CriticalTemperatures {
    /// `(beta_c / J, beta_s / J)`.
    pub fn over_j(&self, j: f64) -> (f64, f64) {
        (self.beta_c / j, self.beta_s / j)
    }
}

/// `beta_c = ((q-1)/(q-2)) ln(q-1)`, with the limit value 1 at `q = 2`.
pub fn beta_c(q: usize) -> f64 {
    if q == 2 {
        1.0
    } else {
        let q = q as f64;
        (q - 1.0) / (q - 2.0) * (q - 1.0).ln()
    }
}

pub fn critical_temperatures(q: usize) -> Result<CriticalTemperatures> {
    if q < 2 {
        return Err(PottsError::InvalidParameter(format!("q must be at least 2, got {q}")));
    }
    Ok(CriticalTemperatures {
        q,
        beta_c: beta_c(q),
        beta_s: beta_s(q),
    })
}

/// `D(y) = -y + 1 / (1 + (q-1) exp((2 betaJ/(q-1)) (1 - q y)))`.
pub fn spinodal_d(y: f64, beta_j: f64, q: usize) -> f64 {
    let qf = q as f64;
    -y + 1.0 / (1.0 + (qf - 1.0) * (2.0 * beta_j / (qf - 1.0) * (1.0 - qf * y)).exp())
}

/// `D'(1/q) = -1 + 2 betaJ / q`.
pub fn spinodal_d_slope_at_center(beta_j: f64, q: usize) -> f64 {
    -1.0 + 2.0 * beta_j / q as f64
}

const SCAN_STEP: f64 = 1e-3;

/// Maximum of `D` over `[1/q + 1e-3, 1]`: grid scan with step `1e-3`, then golden-section
/// refinement around the best grid point. Returns `(argmax, max)`.
pub fn max_spinodal_d(beta_j: f64, q: usize) -> (f64, f64) {
    let lo = 1.0 / q as f64;
    let count = ((1.0 - lo) / SCAN_STEP).floor() as usize;
    let mut best = (1.0, spinodal_d(1.0, beta_j, q));
    for k in 1..=count {
        let y = lo + k as f64 * SCAN_STEP;
        let d = spinodal_d(y, beta_j, q);
        if d > best.1 {
            best = (y, d);
        }
    }
    let f = |y: f64| spinodal_d(y, beta_j, q);
    let (mut a, mut b) = ((best.0 - SCAN_STEP).max(lo + SCAN_STEP), (best.0 + SCAN_STEP).min(1.0));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    for _ in 0..80 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    let y = 0.5 * (a + b);
    if f(y) > best.1 {
        (y, f(y))
    } else {
        best
    }
}

/// Whether `D` has a zero in `(1/q, 1)`. A positive slope at `1/q` forces one
/// because `D(1) < 0`.
pub fn has_interior_zero(beta_j: f64, q: usize) -> bool {
    spinodal_d_slope_at_center(beta_j, q) > 0.0 || max_spinodal_d(beta_j, q).1 >= 0.0
}

/// Smallest `betaJ` at which `D` acquires a zero in `(1/q, 1)`, by bisection to `1e-9`.
fn beta_s(q: usize) -> f64 {
    // at betaJ = q/2 the slope at 1/q vanishes, so the zero exists by then
    let (mut lo, mut hi) = (0.0, q as f64 / 2.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if has_interior_zero(mid, q) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest zero of `D` in `(1/q, 1)`, if any.
pub fn largest_spinodal_zero(beta_j: f64, q: usize) -> Option<f64> {
    let lo = 1.0 / q as f64;
    let count = ((1.0 - lo) / SCAN_STEP).floor() as usize;
    let f = |y: f64| spinodal_d(y, beta_j, q);
    // scan down from 1 (where D < 0) to the first non-negative grid value
    let mut hi = 1.0;
    for k in (1..count).rev() {
        let y = lo + k as f64 * SCAN_STEP;
        if f(y) >= 0.0 {
            let (mut a, mut b) = (y, hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if f(mid) >= 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
                if b - a < 1e-14 {
                    break;
                }
            }
            return Some(0.5 * (a + b));
        }
        hi = y;
    }
    if spinodal_d_slope_at_center(beta_j, q) > 0.0 {
        // the zero sits below the first grid point
        let (mut a, mut b) = (lo + 1e-12, lo + SCAN_STEP);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if f(mid) >= 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        return Some(0.5 * (a + b));
    }
    None
}

/// `(xi, t_xi)` with `xi = 1/(2(1 - 2 betaJ/q))` and `t_xi = xi n ln n`.
pub fn xi_and_cutoff_time(params: &ModelParams) -> Result<(f64, f64)> {
    let slack = 1.0 - 2.0 * params.beta_j() / params.q as f64;
    if slack <= 0.0 {
        return Err(PottsError::OutOfRegime(format!(
            "betaJ = {} >= q/2: xi is undefined",
            params.beta_j()
        )));
    }
    let xi = 1.0 / (2.0 * slack);
    let n = params.n as f64;
    Ok((xi, xi * n * n.ln()))
}

/// Per-step contraction constant `p = 1 - (1 - 2 betaJ/q)/n`.
pub fn contraction_constant(params: &ModelParams) -> f64 {
    1.0 - (1.0 - 2.0 * params.beta_j() / params.q as f64) / params.n as f64
}

/// Exponent used in the macrostate fixed-point equation
/// `u = (1 - e^{-c u}) / (1 + (q-1) e^{-c u})`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FixedPointConvention {
    /// `c = betaJ`, the equation exactly as usually printed.
    AsPrinted,
    /// `c = 2 betaJ`: the normalization of `g`, whose fixed points with identical rows
    /// are the zeros of `D`.
    DriftConsistent,
}

pub fn fixed_point_rhs(u: f64, beta_j: f64, q: usize, conv: FixedPointConvention) -> f64 {
    let c = match conv {
        FixedPointConvention::AsPrinted => beta_j,
        FixedPointConvention::DriftConsistent => 2.0 * beta_j,
    };
    let e = (-c * u).exp();
    (1.0 - e) / (1.0 + (q as f64 - 1.0) * e)
}

/// Largest root of the fixed-point equation in `[0, 1]`: scan `(0, 1]` with step `1e-3`
/// for sign changes, then bisect to `1e-10` and below. Returns 0 when no positive root exists.
pub fn largest_fixed_point(beta_j: f64, q: usize, conv: FixedPointConvention) -> f64 {
    let f = |u: f64| u - fixed_point_rhs(u, beta_j, q, conv);
    let count = (1.0 / SCAN_STEP).round() as usize;
    let mut upper = 1.0;
    let mut f_upper = f(1.0);
    for k in (1..count).rev() {
        let u = k as f64 * SCAN_STEP;
        let fu = f(u);
        if fu <= 0.0 && f_upper > 0.0 {
            let (mut a, mut b) = (u, upper);
            while b - a > 1e-13 {
                let mid = 0.5 * (a + b);
                if f(mid) <= 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return 0.5 * (a + b);
        }
        upper = u;
        f_upper = fu;
    }
    0.0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Macrostates {
    pub u: f64,
    /// `psi(u) = ((1+(q-1)u)/(mq), (1-u)/(mq), ...)`.
    pub psi: Vec<f64>,
    /// `nu^1..nu^q`, each `m x q` with identical rows `psi`, coordinates 1 and i swapped.
    pub nu: Vec<ProportionMatrix>,
}

impl Macrostates {
    /// `m * nu^i`, whose rows are probability vectors.
    pub fn scaled_nu(&self, i: usize) -> ProportionMatrix {
        let m = self.nu[i].m();
        self.nu[i].scaled(m as f64)
    }
}

/// Macrostates with the drift-consistent exponent; see [`equilibrium_macrostates_with`].
pub fn equilibrium_macrostates(beta_j: f64, q: usize, m: usize) -> Macrostates {
    equilibrium_macrostates_with(beta_j, q, m, FixedPointConvention::DriftConsistent)
}

pub fn equilibrium_macrostates_with(
    beta_j: f64,
    q: usize,
    m: usize,
    conv: FixedPointConvention,
) -> Macrostates {
    let u = largest_fixed_point(beta_j, q, conv);
    let (qf, mf) = (q as f64, m as f64);
    let mut psi = vec![(1.0 - u) / (mf * qf); q];
    psi[0] = (1.0 + (qf - 1.0) * u) / (mf * qf);
    let nu = (0..q)
        .map(|i| {
            let mut row = psi.clone();
            row.swap(0, i);
            ProportionMatrix::repeated_row(m, &row)
        })
        .collect();
    Macrostates { u, psi, nu }
}

/// Compares both fixed-point conventions against the zeros of `D`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MacrostateConsistency {
    pub beta_j: f64,
    pub q: usize,
    pub u_as_printed: f64,
    pub u_drift_consistent: f64,
    /// Largest zero of `D` in `(1/q, 1)`.
    pub d_zero: Option<f64>,
    /// Positive root present exactly when `D` has an interior zero.
    pub as_printed_agrees: bool,
    pub drift_consistent_agrees: bool,
}

pub fn macrostate_consistency(beta_j: f64, q: usize) -> MacrostateConsistency {
    let u_p = largest_fixed_point(beta_j, q, FixedPointConvention::AsPrinted);
    let u_d = largest_fixed_point(beta_j, q, FixedPointConvention::DriftConsistent);
    let d_zero = largest_spinodal_zero(beta_j, q);
    MacrostateConsistency {
        beta_j,
        q,
        u_as_printed: u_p,
        u_drift_consistent: u_d,
        d_zero,
        as_printed_agrees: (u_p > 0.0) == d_zero.is_some(),
        drift_consistent_agrees: (u_d > 0.0) == d_zero.is_some(),
    }
}

/// `I = (1/m) sum_i sum_j nu_i(j) ln(q nu_i(j))`, with `0 ln 0 = 0`.
pub fn rate_function(rows: &[Vec<f64>]) -> Result<f64> {
    if rows.is_empty() {
        return Err(PottsError::InvalidInput("no rows".into()));
    }
    let mut total = 0.0;
    for row in rows {
        let s: f64 = row.iter().sum();
        if row.is_empty() || row.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(PottsError::InvalidInput("row is not a probability vector".into()));
        }
        let q = row.len() as f64;
        total += row
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| x * (q * x).ln())
            .sum::<f64>();
    }
    Ok(total / rows.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathFunctionalReport {
    pub z: Vec<f64>,
    /// `(1/m) sum_{ij} int_0^1 |d/dt g^{ij}(z(t))| dt` along `z(t) = (1-t) Delta + t z`.
    pub value: f64,
    /// `value / ||z - Delta||_{(1,1)}`, 0 when `z = Delta`.
    pub ratio: f64,
    pub steps: usize,
    /// Relative change between `steps` and `2 steps` panels.
    pub refinement_change: f64,
}

/// Total variation of each `g^{ij}` along the line. On each panel the integral of
/// `|dg/dt|` equals `|g(end) - g(start)|` unless the derivative changes sign inside,
/// in which case the turning point is located by bisection and both halves are added.
fn g_variation(z: &ProportionMatrix, params: &ModelParams, steps: usize) -> f64 {
    let (m, q) = (z.m(), z.q());
    let delta = ProportionMatrix::delta(m, q);
    let dir = z.minus(&delta);
    let at = |t: f64| delta.lerp(z, t);
    let gs: Vec<ProportionMatrix> = (0..=steps)
        .map(|k| update_distribution(&at(k as f64 / steps as f64), params))
        .collect();
    let ds: Vec<ProportionMatrix> = (0..=steps)
        .map(|k| update_distribution_derivative(&at(k as f64 / steps as f64), &dir, params))
        .collect();
    let mut total = 0.0;
    for e in 0..m * q {
        for k in 0..steps {
            let (g0, g1) = (gs[k].as_slice()[e], gs[k + 1].as_slice()[e]);
            let (d0, d1) = (ds[k].as_slice()[e], ds[k + 1].as_slice()[e]);
            if d0 * d1 < 0.0 {
                let (mut a, mut b) = (k as f64 / steps as f64, (k + 1) as f64 / steps as f64);
                for _ in 0..60 {
                    let mid = 0.5 * (a + b);
                    let dm = update_distribution_derivative(&at(mid), &dir, params).as_slice()[e];
                    if dm * d0 > 0.0 {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                let gm = update_distribution(&at(0.5 * (a + b)), params).as_slice()[e];
                total += (gm - g0).abs() + (g1 - gm).abs();
            } else {
                total += (g1 - g0).abs();
            }
        }
    }
    total / m as f64
}

pub fn aggregate_g_variation_line(
    z: &ProportionMatrix,
    params: &ModelParams,
    steps: usize,
) -> Result<PathFunctionalReport> {
    if steps < 2 {
        return Err(PottsError::InvalidInput("steps must be at least 2".into()));
    }
    if z.m() != params.m || z.q() != params.q {
        return Err(PottsError::InvalidInput("z has the wrong shape".into()));
    }
    ProportionMatrix::new(z.m(), z.q(), z.as_slice().to_vec())?;
    let length = z.l11_distance(&ProportionMatrix::delta(z.m(), z.q()));
    let value = g_variation(z, params, steps);
    let fine = g_variation(z, params, 2 * steps);
    let refinement_change = if fine > 0.0 {
        (fine - value).abs() / fine
    } else {
        0.0
    };
    Ok(PathFunctionalReport {
        z: z.as_slice().to_vec(),
        value,
        ratio: if length > 0.0 { value / length } else { 0.0 },
        steps,
        refinement_change,
    })
}

/// Uniform point of the simplex product (each row Dirichlet(1, ..., 1)).
pub fn random_simplex_point(m: usize, q: usize, rng: &mut PottsRng) -> ProportionMatrix {
    let mut e = Vec::with_capacity(m * q);
    for _ in 0..m {
        let row: Vec<f64> = (0..q).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let s: f64 = row.iter().sum();
        e.extend(row.iter().map(|x| x / s));
    }
    ProportionMatrix::from_raw(m, q, e)
}

/// Largest `g^{ij}(z) - (K z)^{ij}/(mJ)` over entries with `(K z)^{ij} > mJ/q`,
/// or `None` when no entry qualifies.
pub fn g_upper_bound_slack(z: &ProportionMatrix, params: &ModelParams) -> Option<f64> {
    let (m, q) = (z.m(), z.q());
    let mj = m as f64 * params.j();
    let kz = params.interaction().apply(z.as_slice(), q);
    let g = update_distribution(z, params);
    let mut worst: Option<f64> = None;
    for e in 0..m * q {
        if kz[e] > mj / q as f64 {
            let slack = g.as_slice()[e] - kz[e] / mj;
            worst = Some(worst.map_or(slack, |w: f64| w.max(slack)));
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GBoundReport {
    pub samples: usize,
    pub qualifying_samples: usize,
    pub violations: usize,
    /// Largest `g - Kz/(mJ)` seen; negative means every check passed strictly.
    pub max_slack: f64,
}

fn require_below_spinodal(params: &ModelParams) -> Result<()> {
    let ct = critical_temperatures(params.q)?;
    if params.beta_j() >= ct.beta_s {
        return Err(PottsError::OutOfRegime(format!(
            "beta = {} is not below beta_s/J = {}",
            params.beta,
            ct.beta_s / params.j()
        )));
    }
    Ok(())
}

pub fn verify_g_upper_bound(params: &ModelParams, samples: usize, seed: u64) -> Result<GBoundReport> {
    require_below_spinodal(params)?;
    let mut rng = replica_rng(seed, 0);
    let mut report = GBoundReport {
        samples,
        qualifying_samples: 0,
        violations: 0,
        max_slack: f64::NEG_INFINITY,
    };
    for _ in 0..samples {
        let z = random_simplex_point(params.m, params.q, &mut rng);
        if let Some(s) = g_upper_bound_slack(&z, params) {
            report.qualifying_samples += 1;
            if s >= 0.0 {
                report.violations += 1;
            }
            report.max_slack = report.max_slack.max(s);
        }
    }
    Ok(report)
}

/// Worst `m^{-1} ||g(z) - g(Delta)||_{(1,1)} / ||z - Delta||_{(1,1)}` over random
/// `z` with `0 < ||z - Delta||_{(1,1)} <= radius`.
pub fn local_lipschitz_ratio(params: &ModelParams, radius: f64, samples: usize, seed: u64) -> f64 {
    let (m, q) = (params.m, params.q);
    let delta = ProportionMatrix::delta(m, q);
    let g_delta = update_distribution(&delta, params);
    let mut rng = replica_rng(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let mut d: Vec<f64> = (0..m * q).map(|_| rng.random::<f64>() - 0.5).collect();
        for i in 0..m {
            let mean = d[i * q..(i + 1) * q].iter().sum::<f64>() / q as f64;
            d[i * q..(i + 1) * q].iter_mut().for_each(|x| *x -= mean);
        }
        let norm: f64 = d.iter().map(|x| x.abs()).sum();
        if norm == 0.0 {
            continue;
        }
        let scale = radius * (1.0 - rng.random::<f64>()) / norm;
        let z = ProportionMatrix::from_raw(
            m,
            q,
            delta.as_slice().iter().zip(&d).map(|(x, y)| x + scale * y).collect(),
        );
        let num = update_distribution(&z, params).l11_distance(&g_delta) / m as f64;
        worst = worst.max(num / z.l11_distance(&delta));
    }
    worst
}

/// `M = q^{-2} ones - q^{-1} I` lifted to `I_m (x) M`, and `K (x) M`.
fn kron_parts(params: &ModelParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, q) = (params.m, params.q);
    let qf = q as f64;
    let k = params.interaction();
    let mq = m * q;
    let mm = |j: usize, jj: usize| 1.0 / (qf * qf) - if j == jj { 1.0 / qf } else { 0.0 };
    let i_m = DMatrix::from_fn(mq, mq, |r, c| {
        if r / q == c / q {
            mm(r % q, c % q)
        } else {
            0.0
        }
    });
    let k_m = DMatrix::from_fn(mq, mq, |r, c| k.get(r / q, c / q) * mm(r % q, c % q));
    (i_m, k_m)
}

fn require_below_critical(params: &ModelParams) -> Result<()> {
    if params.beta_j() >= beta_c(params.q) {
        return Err(PottsError::OutOfRegime(format!(
            "beta = {} is not below beta_c/J = {}",
            params.beta,
            beta_c(params.q) / params.j()
        )));
    }
    Ok(())
}

/// Limiting covariance of `sqrt(n/m)(S - Delta)` as an `(mq) x (mq)` matrix indexed
/// `i q + j`. Evaluated as `-(I (x) M)(I + (2 beta/m) K (x) M)^{-1}`, which equals
/// `(m/2)(beta K)^{-1}((I + (2/m) beta K (I (x) M))^{-1} - I)` whenever `beta K` is
/// invertible and stays finite at `beta = 0`.
pub fn clt_covariance(params: &ModelParams) -> Result<DMatrix<f64>> {
    require_below_critical(params)?;
    let (i_m, k_m) = kron_parts(params);
    let mq = i_m.nrows();
    let a = DMatrix::identity(mq, mq) + k_m * (2.0 * params.beta / params.m as f64);
    let inv = a
        .try_inverse()
        .ok_or_else(|| PottsError::OutOfRegime("singular CLT operator".into()))?;
    let lam = -(i_m * inv);
    Ok((&lam + lam.transpose()) * 0.5)
}

/// The covariance through `(m/2)(beta K)^{-1}((I + (2/m) beta K (I (x) M))^{-1} - I)`
/// literally; needs `beta > 0` and `a < b`.
pub fn clt_covariance_direct(params: &ModelParams) -> Result<DMatrix<f64>> {
    require_below_critical(params)?;
    let (m, q) = (params.m, params.q);
    let mq = m * q;
    let k = params.interaction();
    let bk = DMatrix::from_fn(mq, mq, |r, c| {
        if r % q == c % q {
            params.beta * k.get(r / q, c / q)
        } else {
            0.0
        }
    });
    let (i_m, _) = kron_parts(params);
    let bk_inv = bk
        .clone()
        .try_inverse()
        .ok_or_else(|| PottsError::InvalidInput("beta K is singular".into()))?;
    let inner = (DMatrix::identity(mq, mq) + &bk * &i_m * (2.0 / m as f64))
        .try_inverse()
        .ok_or_else(|| PottsError::OutOfRegime("singular CLT operator".into()))?;
    Ok(bk_inv * (inner - DMatrix::identity(mq, mq)) * (m as f64 / 2.0))
}

/// `beta -> 0` limit: block-diagonal `q^{-1} I - q^{-2} ones`.
pub fn clt_covariance_high_temperature(m: usize, q: usize) -> DMatrix<f64> {
    let qf = q as f64;
    DMatrix::from_fn(m * q, m * q, |r, c| {
        if r / q != c / q {
            0.0
        } else if r == c {
            1.0 / qf - 1.0 / (qf * qf)
        } else {
            -1.0 / (qf * qf)
        }
    })
}
