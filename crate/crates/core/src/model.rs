//! Model definition: parameters, interaction matrix, configurations, magnetization,
//! Hamiltonian, heat-bath update law and drift.
//!
//! The Hamiltonian is the matrix form `H = -(n/m^2) Tr(S^T K S)`, which in counts
//! `N = (n/m) S` reads `H = -(1/n) sum_j N_{.j}^T K N_{.j}`.

use serde::{Deserialize, Serialize};

use crate::error::{PottsError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr")]
pub struct ModelParams {
    pub q: usize,
    pub m: usize,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub n: usize,
}

// Deserialization goes through `validate`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    q: usize,
    m: usize,
    a: f64,
    b: f64,
    beta: f64,
    n: usize,
}

impl TryFrom<ParamsRepr> for ModelParams {
    type Error = PottsError;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        ModelParams::new(r.q, r.m, r.a, r.b, r.beta, r.n)
    }
}

impl ModelParams {
    pub fn new(q: usize, m: usize, a: f64, b: f64, beta: f64, n: usize) -> Result<Self> {
        let p = ModelParams { q, m, a, b, beta, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 2 || self.q > u8::MAX as usize {
            return Err(PottsError::InvalidParameter(format!(
                "q must lie in [2, 255], got {}",
                self.q
            )));
        }
        if self.m < 1 {
            return Err(PottsError::InvalidParameter("m must be at least 1".into()));
        }
        if self.n < self.m || self.n % self.m != 0 {
            return Err(PottsError::InvalidParameter(format!(
                "n = {} must be a positive multiple of m = {}",
                self.n, self.m
            )));
        }
        if self.n > u32::MAX as usize {
            return Err(PottsError::InvalidParameter("n too large".into()));
        }
        check_couplings(self.a, self.b)?;
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(PottsError::InvalidParameter(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Effective coupling `(b + (m-1) a) / m`.
    pub fn j(&self) -> f64 {
        (self.b + (self.m as f64 - 1.0) * self.a) / self.m as f64
    }

    pub fn beta_j(&self) -> f64 {
        self.beta * self.j()
    }

    /// Vertices per block, `n / m`.
    pub fn block_size(&self) -> usize {
        self.n / self.m
    }

    /// Set when `a == b`: the blocks are indistinguishable and the model is the
    /// complete-graph Potts model.
    pub fn equal_couplings_warning(&self) -> bool {
        self.a == self.b
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        ModelParams { beta, ..self.clone() }
    }

    pub fn with_n(&self, n: usize) -> Self {
        ModelParams { n, ..self.clone() }
    }

    pub fn interaction(&self) -> InteractionMatrix {
        InteractionMatrix {
            m: self.m,
            a: self.a,
            b: self.b,
        }
    }
}

fn check_couplings(a: f64, b: f64) -> Result<()> {
    if !a.is_finite() || !b.is_finite() || a < 0.0 || b <= 0.0 {
        return Err(PottsError::InvalidParameter(format!(
            "couplings need 0 <= a and 0 < b, got a = {a}, b = {b}"
        )));
    }
    if a > b {
        return Err(PottsError::InvalidParameter(format!(
            "inter-block coupling a = {a} exceeds self-coupling b = {b}"
        )));
    }
    Ok(())
}

pub fn effective_coupling(a: f64, b: f64, m: usize) -> Result<f64> {
    if m < 1 {
        return Err(PottsError::InvalidParameter("m must be at least 1".into()));
    }
    Ok((b + (m as f64 - 1.0) * a) / m as f64)
}

/// `K = a * ones + (b - a) * I`, stored implicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMatrix {
    pub m: usize,
    pub a: f64,
    pub b: f64,
}

impl InteractionMatrix {
    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        if i == k {
            self.b
        } else {
            self.a
        }
    }

    /// Row-major dense entries.
    pub fn entries(&self) -> Vec<f64> {
        let m = self.m;
        (0..m * m).map(|x| self.get(x / m, x % m)).collect()
    }

    /// Eigenvalues in ascending order: `b - a` with multiplicity `m - 1`, then `m J`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev = vec![self.b - self.a; self.m - 1];
        ev.push(self.b + (self.m as f64 - 1.0) * self.a);
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }

    /// `K x` for an `m x q` row-major matrix `x`.
    pub fn apply(&self, x: &[f64], q: usize) -> Vec<f64> {
        let m = self.m;
        let mut col_sum = vec![0.0; q];
        for i in 0..m {
            for j in 0..q {
                col_sum[j] += x[i * q + j];
            }
        }
        let mut out = vec![0.0; m * q];
        for i in 0..m {
            for j in 0..q {
                out[i * q + j] = self.a * col_sum[j] + (self.b - self.a) * x[i * q + j];
            }
        }
        out
    }
}

pub fn interaction_matrix(a: f64, b: f64, m: usize) -> Result<InteractionMatrix> {
    if m < 1 {
        return Err(PottsError::InvalidParameter("m must be at least 1".into()));
    }
    check_couplings(a, b)?;
    Ok(InteractionMatrix { m, a, b })
}

/// Vertex colors, block by block: vertex `v` lies in block `v / (n/m)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    m: usize,
    q: usize,
    colors: Vec<u8>,
}

impl Configuration {
    pub fn new(m: usize, q: usize, colors: Vec<u8>) -> Result<Self> {
        if m == 0 || colors.is_empty() || colors.len() % m != 0 {
            return Err(PottsError::InvalidInput(format!(
                "{} vertices cannot be split into {} equal blocks",
                colors.len(),
                m
            )));
        }
        if let Some(&c) = colors.iter().find(|&&c| c as usize >= q) {
            return Err(PottsError::InvalidInput(format!(
                "color {c} out of range for q = {q}"
            )));
        }
        Ok(Configuration { m, q, colors })
    }

    /// Builds a configuration from per-block color lists of equal length.
    pub fn from_blocks(q: usize, blocks: &[Vec<u8>]) -> Result<Self> {
        let len = blocks.first().map_or(0, |b| b.len());
        if blocks.iter().any(|b| b.len() != len) {
            return Err(PottsError::InvalidInput("blocks of unequal size".into()));
        }
        Configuration::new(blocks.len(), q, blocks.concat())
    }

    pub fn monochromatic(params: &ModelParams, color: usize) -> Result<Self> {
        if color >= params.q {
            return Err(PottsError::InvalidInput(format!("color {color} >= q")));
        }
        Configuration::new(params.m, params.q, vec![color as u8; params.n])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.colors.len()
    }

    pub fn block_size(&self) -> usize {
        self.colors.len() / self.m
    }

    pub fn block_of(&self, v: usize) -> usize {
        v / self.block_size()
    }

    #[inline]
    pub fn color(&self, v: usize) -> usize {
        self.colors[v] as usize
    }

    pub fn colors(&self) -> &[u8] {
        &self.colors
    }

    pub fn set_color(&mut self, v: usize, color: usize) {
        debug_assert!(color < self.q);
        self.colors[v] = color as u8;
    }

    pub fn fits(&self, params: &ModelParams) -> bool {
        self.m == params.m && self.q == params.q && self.colors.len() == params.n
    }

    pub fn counts(&self) -> CountMatrix {
        let bs = self.block_size();
        let mut counts = vec![0u32; self.m * self.q];
        for (v, &c) in self.colors.iter().enumerate() {
            counts[(v / bs) * self.q + c as usize] += 1;
        }
        CountMatrix {
            m: self.m,
            q: self.q,
            counts,
        }
    }

    pub fn hamming(&self, other: &Configuration) -> usize {
        self.colors
            .iter()
            .zip(other.colors.iter())
            .filter(|(x, y)| x != y)
            .count()
    }
}

/// Color counts per block, row-major `m x q`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountMatrix {
    m: usize,
    q: usize,
    counts: Vec<u32>,
}

impl CountMatrix {
    /// Checks that every row has the same positive sum.
    pub fn new(m: usize, q: usize, counts: Vec<u32>) -> Result<Self> {
        if m == 0 || q == 0 || counts.len() != m * q {
            return Err(PottsError::InvalidInput(format!(
                "expected {} counts, got {}",
                m * q,
                counts.len()
            )));
        }
        let c = CountMatrix { m, q, counts };
        let bs = c.row_sum(0);
        if bs == 0 || (1..m).any(|i| c.row_sum(i) != bs) {
            return Err(PottsError::InvalidInput(
                "every block must hold the same positive number of vertices".into(),
            ));
        }
        Ok(c)
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let q = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != q) {
            return Err(PottsError::InvalidInput("rows of unequal length".into()));
        }
        CountMatrix::new(rows.len(), q, rows.concat())
    }

    pub fn monochromatic(params: &ModelParams, color: usize) -> Result<Self> {
        if color >= params.q {
            return Err(PottsError::InvalidInput(format!("color {color} >= q")));
        }
        let mut counts = vec![0u32; params.m * params.q];
        for i in 0..params.m {
            counts[i * params.q + color] = params.block_size() as u32;
        }
        CountMatrix::new(params.m, params.q, counts)
    }

    /// Counts closest to uniform: `n/(mq)` each, the remainder going to the lowest colors.
    pub fn delta_nearest(params: &ModelParams) -> Self {
        let (m, q, bs) = (params.m, params.q, params.block_size());
        let mut counts = vec![0u32; m * q];
        for i in 0..m {
            for j in 0..q {
                counts[i * q + j] = (bs / q + usize::from(j < bs % q)) as u32;
            }
        }
        CountMatrix { m, q, counts }
    }

    /// Counts closest to `target * (n/m)` row by row (largest remainder rounding,
    /// ties to the lowest color). `target` rows must be probability vectors.
    pub fn nearest_to(params: &ModelParams, target: &ProportionMatrix) -> Self {
        let (m, q, bs) = (params.m, params.q, params.block_size());
        let mut counts = vec![0u32; m * q];
        for i in 0..m {
            let exact: Vec<f64> = (0..q).map(|j| target.get(i, j) * bs as f64).collect();
            let mut row: Vec<u32> = exact.iter().map(|x| x.floor().max(0.0) as u32).collect();
            let mut missing = bs as i64 - row.iter().map(|&x| x as i64).sum::<i64>();
            let mut order: Vec<usize> = (0..q).collect();
            order.sort_by(|&x, &y| {
                let rx = exact[x] - exact[x].floor();
                let ry = exact[y] - exact[y].floor();
                ry.partial_cmp(&rx).unwrap().then(x.cmp(&y))
            });
            let mut k = 0;
            while missing > 0 {
                row[order[k % q]] += 1;
                missing -= 1;
                k += 1;
            }
            counts[i * q..(i + 1) * q].copy_from_slice(&row);
        }
        CountMatrix { m, q, counts }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.q + j]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.counts[i * self.q..(i + 1) * self.q]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.row(i).iter().map(|&x| x as usize).sum()
    }

    pub fn block_size(&self) -> usize {
        self.row_sum(0)
    }

    pub fn n(&self) -> usize {
        self.block_size() * self.m
    }

    pub fn fits(&self, params: &ModelParams) -> bool {
        self.m == params.m && self.q == params.q && self.block_size() == params.block_size()
    }

    /// Moves one vertex of block `i` from color `from` to color `to`.
    #[inline]
    pub fn apply_move(&mut self, i: usize, from: usize, to: usize) {
        debug_assert!(self.counts[i * self.q + from] > 0);
        self.counts[i * self.q + from] -= 1;
        self.counts[i * self.q + to] += 1;
    }

    pub fn proportions(&self) -> ProportionMatrix {
        let bs = self.block_size() as f64;
        ProportionMatrix {
            m: self.m,
            q: self.q,
            entries: self.counts.iter().map(|&c| c as f64 / bs).collect(),
        }
    }

    /// `K N` as a row-major real matrix.
    pub fn k_times(&self, k: &InteractionMatrix) -> Vec<f64> {
        let x: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        k.apply(&x, self.q)
    }

    /// `sum_{i,j} |N_ij - N'_ij|`.
    pub fn l1_count_distance(&self, other: &CountMatrix) -> u64 {
        self.counts
            .iter()
            .zip(other.counts.iter())
            .map(|(&x, &y)| (x as i64 - y as i64).unsigned_abs())
            .sum()
    }
}

/// A real `m x q` matrix; rows are probability vectors when built through [`new`](Self::new).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProportionMatrix {
    m: usize,
    q: usize,
    entries: Vec<f64>,
}

impl ProportionMatrix {
    pub fn new(m: usize, q: usize, entries: Vec<f64>) -> Result<Self> {
        if m == 0 || q == 0 || entries.len() != m * q {
            return Err(PottsError::InvalidInput(format!(
                "expected {} entries, got {}",
                m * q,
                entries.len()
            )));
        }
        for i in 0..m {
            let row = &entries[i * q..(i + 1) * q];
            if row.iter().any(|&x| !(x >= 0.0)) {
                return Err(PottsError::InvalidInput(format!("row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(PottsError::InvalidInput(format!("row {i} sums to {s}")));
            }
        }
        Ok(ProportionMatrix { m, q, entries })
    }

    /// Any real `m x q` matrix, for directions and differences.
    pub fn from_raw(m: usize, q: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), m * q);
        ProportionMatrix { m, q, entries }
    }

    /// `Delta = (1/q) * ones`.
    pub fn delta(m: usize, q: usize) -> Self {
        ProportionMatrix {
            m,
            q,
            entries: vec![1.0 / q as f64; m * q],
        }
    }

    /// Every row equal to `row`.
    pub fn repeated_row(m: usize, row: &[f64]) -> Self {
        ProportionMatrix {
            m,
            q: row.len(),
            entries: row.repeat(m),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.q + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.q..(i + 1) * self.q]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn frobenius_distance(&self, other: &ProportionMatrix) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Entrywise L1 distance `||x - y||_{(1,1)}`.
    pub fn l11_distance(&self, other: &ProportionMatrix) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(x, y)| (x - y).abs())
            .sum()
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &ProportionMatrix, t: f64) -> ProportionMatrix {
        ProportionMatrix {
            m: self.m,
            q: self.q,
            entries: self
                .entries
                .iter()
                .zip(other.entries.iter())
                .map(|(x, y)| (1.0 - t) * x + t * y)
                .collect(),
        }
    }

    pub fn minus(&self, other: &ProportionMatrix) -> ProportionMatrix {
        ProportionMatrix {
            m: self.m,
            q: self.q,
            entries: self
                .entries
                .iter()
                .zip(other.entries.iter())
                .map(|(x, y)| x - y)
                .collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> ProportionMatrix {
        ProportionMatrix {
            m: self.m,
            q: self.q,
            entries: self.entries.iter().map(|x| c * x).collect(),
        }
    }
}

pub fn magnetization(config: &Configuration, params: &ModelParams) -> Result<CountMatrix> {
    if !config.fits(params) {
        return Err(PottsError::InvalidInput(
            "configuration does not match the model parameters".into(),
        ));
    }
    Ok(config.counts())
}

/// `-(n/m^2) Tr(S^T K S)`.
pub fn hamiltonian(s: &ProportionMatrix, params: &ModelParams) -> f64 {
    let k = params.interaction();
    let ks = k.apply(s.as_slice(), s.q());
    let tr: f64 = s.as_slice().iter().zip(ks.iter()).map(|(x, y)| x * y).sum();
    -(params.n as f64) / (params.m * params.m) as f64 * tr
}

/// Same energy from integer counts: `-(1/n) sum_j N_{.j}^T K N_{.j}`.
pub fn hamiltonian_counts(c: &CountMatrix, params: &ModelParams) -> f64 {
    let kn = c.k_times(&params.interaction());
    let tr: f64 = c
        .as_slice()
        .iter()
        .zip(kn.iter())
        .map(|(&x, y)| x as f64 * y)
        .sum();
    -tr / params.n as f64
}

/// Softmax of `x` written into `out`, shifted by the maximum for stability.
#[inline]
pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = (v - mx).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// `g_beta(z)`: row `i` is the softmax over `j` of `(2 beta / m) (K z)^{ij}`.
pub fn update_distribution(z: &ProportionMatrix, params: &ModelParams) -> ProportionMatrix {
    let (m, q) = (z.m(), z.q());
    let kz = params.interaction().apply(z.as_slice(), q);
    let c = 2.0 * params.beta / m as f64;
    let scaled: Vec<f64> = kz.iter().map(|x| c * x).collect();
    let mut out = vec![0.0; m * q];
    for i in 0..m {
        softmax_into(&scaled[i * q..(i + 1) * q], &mut out[i * q..(i + 1) * q]);
    }
    ProportionMatrix::from_raw(m, q, out)
}

/// Derivative of `g_beta(z + t dir)` at `t = 0`:
/// `(2 beta / m) g^{ij} [ (K dir)^{ij} - <(K dir)^{i*}, g^{i*}> ]`.
pub fn update_distribution_derivative(
    z: &ProportionMatrix,
    dir: &ProportionMatrix,
    params: &ModelParams,
) -> ProportionMatrix {
    let (m, q) = (z.m(), z.q());
    let g = update_distribution(z, params);
    let kd = params.interaction().apply(dir.as_slice(), q);
    let c = 2.0 * params.beta / m as f64;
    let mut out = vec![0.0; m * q];
    for i in 0..m {
        let mean: f64 = (0..q).map(|k| kd[i * q + k] * g.get(i, k)).sum();
        for j in 0..q {
            out[i * q + j] = c * g.get(i, j) * (kd[i * q + j] - mean);
        }
    }
    ProportionMatrix::from_raw(m, q, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatBathMode {
    /// Gibbs conditional of the vertex being recolored.
    Exact,
    /// `g_beta^{(i,.)}(S)`.
    Asymptotic,
}

/// Gibbs conditional for recoloring a vertex of block `i` currently colored `old`,
/// given `K N` (row `i` only is read). Weights are `exp((2 beta / n)((K N)^{ik} - b [k = old]))`;
/// the vertex's own contribution is removed exactly.
#[inline]
pub(crate) fn exact_conditional_into(
    kn_row: &[f64],
    old: usize,
    params: &ModelParams,
    out: &mut [f64],
) {
    let c = 2.0 * params.beta / params.n as f64;
    let mut mx = f64::NEG_INFINITY;
    for (k, o) in out.iter_mut().enumerate() {
        let mut e = kn_row[k];
        if k == old {
            e -= params.b;
        }
        *o = c * e;
        mx = mx.max(*o);
    }
    let mut s = 0.0;
    for o in out.iter_mut() {
        *o = (*o - mx).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

pub fn heat_bath_distribution(
    counts: &CountMatrix,
    block: usize,
    old_color: usize,
    params: &ModelParams,
    mode: HeatBathMode,
) -> Result<Vec<f64>> {
    if !counts.fits(params) || block >= params.m || old_color >= params.q {
        return Err(PottsError::InvalidInput(
            "state, block or color does not match the model parameters".into(),
        ));
    }
    let q = params.q;
    let mut out = vec![0.0; q];
    match mode {
        HeatBathMode::Exact => {
            if counts.get(block, old_color) == 0 {
                return Err(PottsError::EmptyColorClass {
                    block,
                    color: old_color,
                });
            }
            let kn = counts.k_times(&params.interaction());
            exact_conditional_into(&kn[block * q..(block + 1) * q], old_color, params, &mut out);
        }
        HeatBathMode::Asymptotic => {
            let g = update_distribution(&counts.proportions(), params);
            out.copy_from_slice(g.row(block));
        }
    }
    Ok(out)
}

/// Exact one-step mean of `S_{t+1} - S_t` under the lumped kernel, row-major `m x q`.
pub fn expected_drift(counts: &CountMatrix, params: &ModelParams) -> Vec<f64> {
    let (m, q, bs) = (params.m, params.q, params.block_size());
    let kn = counts.k_times(&params.interaction());
    let step = 1.0 / bs as f64;
    let mut drift = vec![0.0; m * q];
    let mut p = vec![0.0; q];
    for i in 0..m {
        for j in 0..q {
            let nij = counts.get(i, j);
            if nij == 0 {
                continue;
            }
            exact_conditional_into(&kn[i * q..(i + 1) * q], j, params, &mut p);
            let w = nij as f64 / (m * bs) as f64;
            for k in 0..q {
                drift[i * q + k] += w * p[k] * step;
                drift[i * q + j] -= w * p[k] * step;
            }
        }
    }
    drift
}

/// `(1/n)(-S + g_beta(S))`.
pub fn asymptotic_drift(counts: &CountMatrix, params: &ModelParams) -> Vec<f64> {
    let s = counts.proportions();
    let g = update_distribution(&s, params);
    let n = params.n as f64;
    s.as_slice()
        .iter()
        .zip(g.as_slice().iter())
        .map(|(x, y)| (y - x) / n)
        .collect()
}
