//! Glauber dynamics engines.
//!
//! [`Chain`] holds the counts, a cached `K N` and, in full mode, the configuration with
//! per-(block, color) vertex lists. Both modes share [`crate::model::exact_conditional_into`]:
//! a full step picks a uniform vertex, a lumped step picks a uniform block and then an
//! old color with probability `N_ij / (n/m)`, which is the exact lumping of the full step.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{PottsError, Result};
use crate::io::{fmt_f64, matrix_headers};
use crate::model::{
    exact_conditional_into, hamiltonian_counts, Configuration, CountMatrix, InteractionMatrix,
    ModelParams, ProportionMatrix,
};
use crate::rng::{replica_rng, Draw, PottsRng};

const REVALIDATE_EVERY: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Lumped,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Start {
    /// Every vertex colored independently and uniformly.
    UniformRandom,
    Monochromatic(usize),
    /// Counts closest to `Delta`, ties to the lowest colors; in full mode vertices are
    /// colored in increasing color order within each block.
    DeltaNearest,
    Counts(CountMatrix),
    Config(Configuration),
}

/// Configuration with per-(block, color) vertex lists for O(1) uniform draws.
#[derive(Clone, Debug)]
pub struct IndexedConfig {
    config: Configuration,
    members: Vec<Vec<u32>>,
    pos: Vec<u32>,
}

impl IndexedConfig {
    pub fn new(config: Configuration) -> Self {
        let (m, q, bs) = (config.m(), config.q(), config.block_size());
        let mut members = vec![Vec::new(); m * q];
        let mut pos = vec![0u32; config.n()];
        for v in 0..config.n() {
            let list = &mut members[(v / bs) * q + config.color(v)];
            pos[v] = list.len() as u32;
            list.push(v as u32);
        }
        IndexedConfig {
            config,
            members,
            pos,
        }
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    /// Vertices of `block` with `color`, in arbitrary order.
    pub fn members(&self, block: usize, color: usize) -> &[u32] {
        &self.members[block * self.config.q() + color]
    }

    pub fn pick<D: Draw>(&self, block: usize, color: usize, draw: &mut D) -> usize {
        let list = self.members(block, color);
        list[draw.uniform_index(list.len())] as usize
    }

    fn recolor(&mut self, v: usize, to: usize) {
        let q = self.config.q();
        let block = self.config.block_of(v);
        let from = self.config.color(v);
        if from == to {
            return;
        }
        let list = &mut self.members[block * q + from];
        let p = self.pos[v] as usize;
        let last = *list.last().unwrap();
        list.swap_remove(p);
        if (last as usize) != v {
            self.pos[last as usize] = p as u32;
        }
        let list = &mut self.members[block * q + to];
        self.pos[v] = list.len() as u32;
        list.push(v as u32);
        self.config.set_color(v, to);
    }
}

/// One Glauber chain without its random source.
#[derive(Clone, Debug)]
pub struct Chain {
    params: ModelParams,
    k: InteractionMatrix,
    counts: CountMatrix,
    kn: Vec<f64>,
    col_sums: Vec<i64>,
    // sum_j (sum_i N_ij)^2 and sum_ij N_ij^2, so that n H = -(a A + (b - a) B) exactly
    col_square_sum: i64,
    entry_square_sum: i64,
    config: Option<IndexedConfig>,
    time: u64,
    flips_since_check: u64,
    scratch: Vec<f64>,
}

impl Chain {
    pub fn from_counts(params: &ModelParams, counts: CountMatrix) -> Result<Self> {
        params.validate()?;
        if !counts.fits(params) {
            return Err(PottsError::InvalidStart(
                "counts do not match the model parameters".into(),
            ));
        }
        Ok(Self::build(params, counts, None))
    }

    pub fn from_config(params: &ModelParams, config: Configuration) -> Result<Self> {
        params.validate()?;
        if !config.fits(params) {
            return Err(PottsError::InvalidStart(
                "configuration does not match the model parameters".into(),
            ));
        }
        let counts = config.counts();
        Ok(Self::build(params, counts, Some(IndexedConfig::new(config))))
    }

    fn build(params: &ModelParams, counts: CountMatrix, config: Option<IndexedConfig>) -> Self {
        let k = params.interaction();
        let kn = counts.k_times(&k);
        let (m, q) = (params.m, params.q);
        let mut col_sums = vec![0i64; q];
        let mut entry_square_sum = 0i64;
        for i in 0..m {
            for j in 0..q {
                let c = counts.get(i, j) as i64;
                col_sums[j] += c;
                entry_square_sum += c * c;
            }
        }
        let col_square_sum = col_sums.iter().map(|c| c * c).sum();
        Chain {
            params: params.clone(),
            k,
            counts,
            kn,
            col_sums,
            col_square_sum,
            entry_square_sum,
            config,
            time: 0,
            flips_since_check: 0,
            scratch: vec![0.0; params.q],
        }
    }

    pub fn mode(&self) -> Mode {
        if self.config.is_some() {
            Mode::Full
        } else {
            Mode::Lumped
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn counts(&self) -> &CountMatrix {
        &self.counts
    }

    pub fn proportions(&self) -> ProportionMatrix {
        self.counts.proportions()
    }

    pub fn config(&self) -> Option<&Configuration> {
        self.config.as_ref().map(|c| c.config())
    }

    pub fn indexed(&self) -> Option<&IndexedConfig> {
        self.config.as_ref()
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn set_time(&mut self, t: u64) {
        self.time = t;
    }

    /// Cached `K N`, row-major.
    pub fn kn(&self) -> &[f64] {
        &self.kn
    }

    /// Energy maintained incrementally from integer sums.
    pub fn energy(&self) -> f64 {
        let (a, b) = (self.params.a, self.params.b);
        -(a * self.col_square_sum as f64 + (b - a) * self.entry_square_sum as f64)
            / self.params.n as f64
    }

    pub fn frobenius_to_delta(&self) -> f64 {
        frobenius_sq_to_delta(&self.counts).sqrt()
    }

    pub fn l11_to_delta(&self) -> f64 {
        let q = self.params.q as f64;
        let bs = self.params.block_size() as f64;
        self.counts
            .as_slice()
            .iter()
            .map(|&c| (c as f64 / bs - 1.0 / q).abs())
            .sum()
    }

    /// Exact Gibbs conditional for recoloring a vertex of `block` with color `old`.
    pub fn conditional_into(&self, block: usize, old: usize, out: &mut [f64]) {
        let q = self.params.q;
        exact_conditional_into(&self.kn[block * q..(block + 1) * q], old, &self.params, out);
    }

    fn update_counts(&mut self, block: usize, from: usize, to: usize) {
        if from == to {
            return;
        }
        let q = self.params.q;
        let (nf, nt) = (
            self.counts.get(block, from) as i64,
            self.counts.get(block, to) as i64,
        );
        self.entry_square_sum += 2 * (nt - nf) + 2;
        self.col_square_sum += 2 * (self.col_sums[to] - self.col_sums[from]) + 2;
        self.col_sums[from] -= 1;
        self.col_sums[to] += 1;
        self.counts.apply_move(block, from, to);
        for i in 0..self.params.m {
            let kik = self.k.get(i, block);
            self.kn[i * q + from] -= kik;
            self.kn[i * q + to] += kik;
        }
        self.flips_since_check += 1;
        if self.flips_since_check >= REVALIDATE_EVERY {
            self.revalidate();
        }
    }

    /// Recomputes `K N` from the counts; panics if the cache drifted by more than `1e-6`.
    pub fn revalidate(&mut self) {
        let fresh = self.counts.k_times(&self.k);
        let drift = fresh
            .iter()
            .zip(self.kn.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-6, "cached K N drifted by {drift}");
        self.kn = fresh;
        self.flips_since_check = 0;
    }

    /// Full mode: recolors vertex `v`.
    pub fn recolor(&mut self, v: usize, to: usize) {
        let cfg = self.config.as_mut().expect("recolor needs a full-mode chain");
        let from = cfg.config().color(v);
        let block = cfg.config().block_of(v);
        cfg.recolor(v, to);
        self.update_counts(block, from, to);
    }

    /// Moves one vertex of `block` from `from` to `to`; in full mode the vertex is
    /// uniform among those of color `from`.
    pub fn apply_move<D: Draw>(&mut self, block: usize, from: usize, to: usize, draw: &mut D) -> Move {
        let vertex = match self.config.as_ref() {
            Some(cfg) => {
                let v = cfg.pick(block, from, draw);
                self.recolor(v, to);
                Some(v)
            }
            None => {
                self.update_counts(block, from, to);
                None
            }
        };
        Move {
            block,
            vertex,
            from,
            to,
        }
    }

    pub fn tick(&mut self) {
        self.time += 1;
    }

    /// Draws a Glauber move `(block, vertex or None, old, new)` without applying it.
    fn propose<D: Draw>(&mut self, draw: &mut D) -> Move {
        let bs = self.params.block_size();
        let (block, vertex, old) = match self.config.as_ref() {
            Some(cfg) => {
                let v = draw.uniform_index(self.params.n);
                (v / bs, Some(v), cfg.config().color(v))
            }
            None => {
                let block = draw.uniform_index(self.params.m);
                let r = draw.uniform_index(bs) as u32;
                let mut acc = 0;
                let mut old = 0;
                for (j, &c) in self.counts.row(block).iter().enumerate() {
                    acc += c;
                    if r < acc {
                        old = j;
                        break;
                    }
                }
                (block, None, old)
            }
        };
        let mut p = std::mem::take(&mut self.scratch);
        self.conditional_into(block, old, &mut p);
        let new = draw.categorical(&p);
        self.scratch = p;
        Move {
            block,
            vertex,
            from: old,
            to: new,
        }
    }

    fn commit(&mut self, mv: Move) {
        match mv.vertex {
            Some(v) => self.recolor(v, mv.to),
            None => self.update_counts(mv.block, mv.from, mv.to),
        }
    }

    /// One Glauber step; returns the move made (possibly a hold with `from == to`).
    pub fn step_with<D: Draw>(&mut self, draw: &mut D) -> Move {
        let mv = self.propose(draw);
        self.commit(mv);
        self.time += 1;
        mv
    }

    /// One step of the chain restricted to `{||S - Delta||_F < rho}`: a move leaving the
    /// ball is suppressed, and time advances either way.
    pub fn bounded_step_with<D: Draw>(&mut self, rho: f64, draw: &mut D) -> Result<Option<Move>> {
        if !(self.frobenius_to_delta() < rho) {
            return Err(PottsError::InvalidStart(format!(
                "state at Frobenius distance {} is outside the ball of radius {rho}",
                self.frobenius_to_delta()
            )));
        }
        let mv = self.propose(draw);
        let accepted = move_stays_inside(&self.counts, mv.block, mv.from, mv.to, rho);
        if accepted {
            self.commit(mv);
        }
        self.time += 1;
        Ok(accepted.then_some(mv))
    }
}

/// `||S - Delta||_F^2` from counts.
pub fn frobenius_sq_to_delta(counts: &CountMatrix) -> f64 {
    let bs = counts.block_size() as f64;
    let q = counts.q() as f64;
    counts
        .as_slice()
        .iter()
        .map(|&c| {
            let d = c as f64 / bs - 1.0 / q;
            d * d
        })
        .sum()
}

/// Whether moving a vertex of `block` from `old` to `new` keeps `||S - Delta||_F < rho`.
pub fn move_stays_inside(counts: &CountMatrix, block: usize, old: usize, new: usize, rho: f64) -> bool {
    if old == new || rho.is_infinite() {
        return true;
    }
    let bs = counts.block_size() as f64;
    let q = counts.q() as f64;
    let sq = |c: f64| {
        let d = c / bs - 1.0 / q;
        d * d
    };
    let (co, cn) = (counts.get(block, old) as f64, counts.get(block, new) as f64);
    let after = frobenius_sq_to_delta(counts) - sq(co) - sq(cn) + sq(co - 1.0) + sq(cn + 1.0);
    after.max(0.0).sqrt() < rho
}

/// A single-vertex recoloring; `vertex` is `None` for lumped chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Move {
    pub block: usize,
    pub vertex: Option<usize>,
    pub from: usize,
    pub to: usize,
}

/// A chain together with its own generator.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub chain: Chain,
    pub rng: PottsRng,
}

impl ChainState {
    pub fn step(&mut self) {
        self.chain.step_with(&mut self.rng);
    }

    pub fn bounded_step(&mut self, rho: f64) -> Result<()> {
        self.chain.bounded_step_with(rho, &mut self.rng).map(|_| ())
    }
}

/// Initial configuration or counts for `start`, drawn from `rng` when random.
pub fn initial_config<D: Draw>(params: &ModelParams, start: &Start, draw: &mut D) -> Result<Configuration> {
    let (m, q) = (params.m, params.q);
    match start {
        Start::UniformRandom => {
            let colors = (0..params.n).map(|_| draw.uniform_index(q) as u8).collect();
            Configuration::new(m, q, colors)
        }
        Start::Monochromatic(c) => Configuration::monochromatic(params, *c),
        Start::DeltaNearest => config_with_counts(&CountMatrix::delta_nearest(params)),
        Start::Counts(c) => {
            if !c.fits(params) {
                return Err(PottsError::InvalidStart("counts do not match n, m, q".into()));
            }
            config_with_counts(c)
        }
        Start::Config(c) => {
            if !c.fits(params) {
                return Err(PottsError::InvalidStart("configuration does not match n, m, q".into()));
            }
            Ok(c.clone())
        }
    }
}

/// Configuration with the given counts, colors laid out in increasing order per block.
pub fn config_with_counts(counts: &CountMatrix) -> Result<Configuration> {
    let mut colors = Vec::with_capacity(counts.n());
    for i in 0..counts.m() {
        for (j, &c) in counts.row(i).iter().enumerate() {
            colors.extend(std::iter::repeat(j as u8).take(c as usize));
        }
    }
    Configuration::new(counts.m(), counts.q(), colors)
}

pub fn init_chain(params: &ModelParams, start: &Start, mode: Mode, seed: u64) -> Result<ChainState> {
    params.validate()?;
    let mut rng = replica_rng(seed, 0);
    let chain = init_chain_with(params, start, mode, &mut rng)?;
    Ok(ChainState { chain, rng })
}

/// Builds a chain, drawing any random start from `draw`.
pub fn init_chain_with<D: Draw>(params: &ModelParams, start: &Start, mode: Mode, draw: &mut D) -> Result<Chain> {
    match (mode, start) {
        (Mode::Lumped, Start::Counts(c)) => Chain::from_counts(params, c.clone()),
        (Mode::Lumped, Start::DeltaNearest) => {
            Chain::from_counts(params, CountMatrix::delta_nearest(params))
        }
        (Mode::Lumped, Start::Monochromatic(c)) => {
            Chain::from_counts(params, CountMatrix::monochromatic(params, *c)?)
        }
        (Mode::Lumped, _) => Chain::from_counts(params, initial_config(params, start, draw)?.counts()),
        (Mode::Full, _) => Chain::from_config(params, initial_config(params, start, draw)?),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub t: u64,
    pub proportions: Vec<f64>,
    pub frob_dist: f64,
    pub l11_dist: f64,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub m: usize,
    pub q: usize,
    pub samples: Vec<TrajectorySample>,
}

impl TrajectoryRecord {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(matrix_headers("S", self.m, self.q));
        header.extend(["frob_dist", "l11_dist", "energy"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string()];
            row.extend(s.proportions.iter().map(|&x| fmt_f64(x)));
            row.push(fmt_f64(s.frob_dist));
            row.push(fmt_f64(s.l11_dist));
            row.push(fmt_f64(s.energy));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn sample(chain: &Chain) -> TrajectorySample {
    TrajectorySample {
        t: chain.time(),
        proportions: chain.proportions().as_slice().to_vec(),
        frob_dist: chain.frobenius_to_delta(),
        l11_dist: chain.l11_to_delta(),
        energy: chain.energy(),
    }
}

/// Advances `steps` steps, sampling at the start, every `sample_every` steps and at the end.
pub fn run_trajectory(state: &mut ChainState, steps: u64, sample_every: u64) -> TrajectoryRecord {
    let every = sample_every.max(1);
    let mut samples = vec![sample(&state.chain)];
    for s in 1..=steps {
        state.step();
        if s % every == 0 || s == steps {
            samples.push(sample(&state.chain));
        }
    }
    TrajectoryRecord {
        m: state.chain.params().m,
        q: state.chain.params().q,
        samples,
    }
}

/// Recomputes the energy from the counts (for checking the incremental value).
pub fn recomputed_energy(chain: &Chain) -> f64 {
    hamiltonian_counts(chain.counts(), chain.params())
}
