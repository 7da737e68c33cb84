//! Markovian couplings of two chains advanced one step at a time.

use serde::Serialize;

use super::{optimal_pair, semi_independent_pair};
use crate::dynamics::{move_stays_inside, Chain, Mode, Move};
use crate::error::{PottsError, Result};
use crate::rng::Draw;

/// Two chains on the same model with a shared clock.
///
/// In full mode the Hamming distance is kept up to date on every move.
#[derive(Clone, Debug)]
pub struct Pair {
    x: Chain,
    y: Chain,
    time: u64,
    hamming: Option<usize>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl Pair {
    pub fn new(x: Chain, y: Chain) -> Result<Self> {
        let (p, r) = (x.params(), y.params());
        if p != r {
            return Err(PottsError::InvalidInput("paired chains have different parameters".into()));
        }
        if x.mode() != y.mode() {
            return Err(PottsError::InvalidInput("paired chains mix full and lumped mode".into()));
        }
        let hamming = match (x.config(), y.config()) {
            (Some(a), Some(b)) => Some(a.hamming(b)),
            _ => None,
        };
        let q = p.q;
        Ok(Pair {
            x,
            y,
            time: 0,
            hamming,
            gx: vec![0.0; q],
            gy: vec![0.0; q],
        })
    }

    pub fn x(&self) -> &Chain {
        &self.x
    }

    pub fn y(&self) -> &Chain {
        &self.y
    }

    pub fn mode(&self) -> Mode {
        self.x.mode()
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn set_time(&mut self, t: u64) {
        self.time = t;
    }

    /// Number of disagreeing vertices; `None` for lumped chains.
    pub fn hamming(&self) -> Option<usize> {
        self.hamming
    }

    pub fn counts_equal(&self) -> bool {
        self.x.counts() == self.y.counts()
    }

    pub fn configs_equal(&self) -> bool {
        self.hamming == Some(0)
    }

    /// `||S - S~||_(1,1)`.
    pub fn l11_distance(&self) -> f64 {
        let bs = self.x.params().block_size() as f64;
        self.x.counts().l1_count_distance(self.y.counts()) as f64 / bs
    }

    /// `sum_i (N - N~)^{ik}` in vertex counts.
    pub fn column_gap(&self, k: usize) -> i64 {
        let m = self.x.params().m;
        (0..m)
            .map(|i| self.x.counts().get(i, k) as i64 - self.y.counts().get(i, k) as i64)
            .sum()
    }

    fn note(&mut self, mv: Move, moved_x: bool) {
        let (Some(h), Some(v)) = (self.hamming.as_mut(), mv.vertex) else {
            return;
        };
        let other = if moved_x { &self.y } else { &self.x };
        let c = other.config().map(|c| c.color(v)).unwrap_or(usize::MAX);
        let before = (mv.from != c) as usize;
        let after = (mv.to != c) as usize;
        *h = *h + after - before;
    }

    pub(crate) fn move_x<D: Draw>(&mut self, block: usize, from: usize, to: usize, draw: &mut D) {
        let mv = self.x.apply_move(block, from, to, draw);
        self.note(mv, true);
    }

    pub(crate) fn move_y<D: Draw>(&mut self, block: usize, from: usize, to: usize, draw: &mut D) {
        let mv = self.y.apply_move(block, from, to, draw);
        self.note(mv, false);
    }

    pub(crate) fn recolor_x(&mut self, v: usize, to: usize) {
        let block = v / self.x.params().block_size();
        let from = self.x.config().expect("full mode").color(v);
        self.x.recolor(v, to);
        self.note(Move { block, vertex: Some(v), from, to }, true);
    }

    pub(crate) fn recolor_y(&mut self, v: usize, to: usize) {
        let block = v / self.y.params().block_size();
        let from = self.y.config().expect("full mode").color(v);
        self.y.recolor(v, to);
        self.note(Move { block, vertex: Some(v), from, to }, false);
    }

    pub(crate) fn tick(&mut self) {
        self.time += 1;
        self.x.tick();
        self.y.tick();
    }

    pub fn into_chains(self) -> (Chain, Chain) {
        (self.x, self.y)
    }
}

/// Both chains take independent Glauber steps.
pub fn independent_step<D: Draw>(pair: &mut Pair, draw: &mut D) {
    let mv = pair.x.step_with(draw);
    pair.note(mv, true);
    let mv = pair.y.step_with(draw);
    pair.note(mv, false);
    pair.time += 1;
}

/// Greedy coupling: both chains update the same uniform vertex with the optimal
/// coupling of their two heat-bath laws. Full mode only.
pub fn greedy_step<D: Draw>(pair: &mut Pair, draw: &mut D) {
    let params = pair.x.params();
    let (n, bs) = (params.n, params.block_size());
    let v = draw.uniform_index(n);
    let block = v / bs;
    let cx = pair.x.config().expect("greedy coupling needs full mode").color(v);
    let cy = pair.y.config().expect("greedy coupling needs full mode").color(v);
    pair.x.conditional_into(block, cx, &mut pair.gx);
    pair.y.conditional_into(block, cy, &mut pair.gy);
    let (k, l) = optimal_pair(&pair.gx, &pair.gy, draw);
    pair.recolor_x(v, k);
    pair.recolor_y(v, l);
    pair.tick();
}

fn block_row(chain: &Chain, block: usize) -> Vec<f64> {
    let bs = chain.params().block_size() as f64;
    chain.counts().row(block).iter().map(|&c| c as f64 / bs).collect()
}

/// Synchronized coupling restricted to `{||S - Delta||_F < rho}`: shared block, optimal
/// coupling of the old colors in that block, optimal coupling of the two exact
/// conditionals, and each chain's move suppressed if it would leave the ball.
pub fn synchronized_step<D: Draw>(pair: &mut Pair, rho: f64, draw: &mut D) -> Result<()> {
    for c in [&pair.x, &pair.y] {
        if !(c.frobenius_to_delta() < rho) {
            return Err(PottsError::InvalidStart(format!(
                "chain at Frobenius distance {} is outside the ball of radius {rho}",
                c.frobenius_to_delta()
            )));
        }
    }
    let m = pair.x.params().m;
    let l = draw.uniform_index(m);
    let (old_x, old_y) = optimal_pair(&block_row(&pair.x, l), &block_row(&pair.y, l), draw);
    pair.x.conditional_into(l, old_x, &mut pair.gx);
    pair.y.conditional_into(l, old_y, &mut pair.gy);
    let (new_x, new_y) = optimal_pair(&pair.gx, &pair.gy, draw);
    if move_stays_inside(pair.x.counts(), l, old_x, new_x, rho) {
        pair.move_x(l, old_x, new_x, draw);
    }
    if move_stays_inside(pair.y.counts(), l, old_y, new_y, rho) {
        pair.move_y(l, old_y, new_y, draw);
    }
    pair.tick();
    Ok(())
}

/// Stage `k` (1-based) of the coordinatewise coupling: the synchronized procedure with
/// both optimal couplings replaced by `{1..k-1}`-semi-independent ones. For `k = 1`
/// the set is empty and the draws are independent.
pub fn coordinatewise_step<D: Draw>(pair: &mut Pair, k: usize, draw: &mut D) {
    let (m, q) = (pair.x.params().m, pair.x.params().q);
    let a: Vec<bool> = (0..q).map(|c| c + 1 < k).collect();
    let l = draw.uniform_index(m);
    let (old_x, old_y) = semi_independent_pair(&block_row(&pair.x, l), &block_row(&pair.y, l), &a, draw);
    pair.x.conditional_into(l, old_x, &mut pair.gx);
    pair.y.conditional_into(l, old_y, &mut pair.gy);
    let (new_x, new_y) = semi_independent_pair(&pair.gx, &pair.gy, &a, draw);
    pair.move_x(l, old_x, new_x, draw);
    pair.move_y(l, old_y, new_y, draw);
    pair.tick();
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoordinatewiseReport {
    /// Length of stage `k`; `None` once a stage hits its cap (later stages are not run).
    pub stage_times: Vec<Option<u64>>,
    pub t_cc: Option<u64>,
    /// `n ||S - S~||_(1,1)` at the end.
    pub u_measured: f64,
    /// `sqrt(n) max(||S - Delta||_F, ||S~ - Delta||_F)` at the end.
    pub r_measured: f64,
}

impl CoordinatewiseReport {
    /// Membership of the final state in `H_{u,r}`.
    pub fn in_h(&self, u: f64, r: f64) -> bool {
        self.u_measured < u && self.r_measured < r
    }
}

/// Whether `|sum_i (S - S~)^{ik}| <= y / n`.
pub fn column_gap_within(pair: &Pair, k: usize, y: f64) -> bool {
    let m = pair.x.params().m as f64;
    // |gap| / (n/m) <= y / n  <=>  |gap| m <= y
    (pair.column_gap(k).unsigned_abs() as f64) * m <= y * (1.0 + 1e-12)
}

/// Runs stages `k = 1..q-1`; stage `k` stops once the column-`k` gap is at most
/// `y[k-1] / n` or after `stage_cap` steps.
pub fn coordinatewise_run<D: Draw>(pair: &mut Pair, y: &[f64], stage_cap: u64, draw: &mut D) -> Result<CoordinatewiseReport> {
    let (q, n) = (pair.x.params().q, pair.x.params().n);
    if y.len() != q - 1 || y.iter().any(|&v| !(v > 0.0)) {
        return Err(PottsError::InvalidParameter(format!(
            "need q - 1 = {} positive thresholds, got {:?}",
            q - 1,
            y
        )));
    }
    let mut stage_times = Vec::with_capacity(q - 1);
    for k in 1..q {
        let mut steps = 0u64;
        while !column_gap_within(pair, k - 1, y[k - 1]) && steps < stage_cap {
            coordinatewise_step(pair, k, draw);
            steps += 1;
        }
        if column_gap_within(pair, k - 1, y[k - 1]) {
            stage_times.push(Some(steps));
        } else {
            stage_times.push(None);
            break;
        }
    }
    let t_cc = if stage_times.len() == q - 1 {
        stage_times.iter().copied().sum::<Option<u64>>()
    } else {
        None
    };
    stage_times.resize(q - 1, None);
    let sqrt_n = (n as f64).sqrt();
    Ok(CoordinatewiseReport {
        stage_times,
        t_cc,
        u_measured: n as f64 * pair.l11_distance(),
        r_measured: sqrt_n * pair.x.frobenius_to_delta().max(pair.y.frobenius_to_delta()),
    })
}
