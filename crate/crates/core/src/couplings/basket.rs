//! Basket partitions and the basketwise coupling.
//!
//! Within each block, vertices are ordered by (basket label, vertex index). Each chain keeps,
//! per (block, color), a Fenwick tree over these positions so that the vertex-matching
//! rules are rank/select queries.

use serde::Serialize;

use super::steps::Pair;
use crate::dynamics::Mode;
use crate::error::{PottsError, Result};
use crate::model::Configuration;
use crate::rng::Draw;

#[derive(Clone, Debug)]
struct Fenwick {
    tree: Vec<i32>,
    top: usize,
}

impl Fenwick {
    fn new(len: usize) -> Self {
        let top = if len == 0 { 0 } else { 1 << (usize::BITS - 1 - len.leading_zeros()) };
        Fenwick {
            tree: vec![0; len + 1],
            top,
        }
    }

    fn add(&mut self, i: usize, delta: i32) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `< i`.
    fn prefix(&self, i: usize) -> i32 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    /// Position of the element of rank `k` (0-based).
    fn select(&self, k: i32) -> usize {
        let (mut pos, mut rem, mut step) = (0usize, k, self.top);
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// A per-block partition of the vertices into `q` baskets.
#[derive(Clone, Debug, PartialEq)]
pub struct Basket {
    m: usize,
    q: usize,
    bs: usize,
    label: Vec<u8>,
    pos: Vec<u32>,
    vertex_at: Vec<u32>,
    start: Vec<u32>,
}

impl Basket {
    /// Basket `l` of block `i` is `{v in V_i : labels[v] = l}`.
    pub fn from_labels(m: usize, q: usize, labels: Vec<u8>) -> Result<Self> {
        if m == 0 || labels.len() % m != 0 || labels.iter().any(|&l| l as usize >= q) {
            return Err(PottsError::InvalidInput("basket labels do not fit m blocks and q baskets".into()));
        }
        let bs = labels.len() / m;
        let mut pos = vec![0u32; labels.len()];
        let mut vertex_at = vec![0u32; labels.len()];
        let mut start = vec![0u32; m * (q + 1)];
        for i in 0..m {
            let mut order: Vec<usize> = (i * bs..(i + 1) * bs).collect();
            order.sort_by_key(|&v| (labels[v], v));
            for (p, &v) in order.iter().enumerate() {
                pos[v] = p as u32;
                vertex_at[i * bs + p] = v as u32;
            }
            let mut acc = 0u32;
            for l in 0..q {
                start[i * (q + 1) + l] = acc;
                acc += order.iter().filter(|&&v| labels[v] as usize == l).count() as u32;
            }
            start[i * (q + 1) + q] = acc;
        }
        Ok(Basket {
            m,
            q,
            bs,
            label: labels,
            pos,
            vertex_at,
            start,
        })
    }

    /// Baskets given by the colors of `config`.
    pub fn from_config(config: &Configuration) -> Self {
        Self::from_labels(config.m(), config.q(), config.colors().to_vec()).expect("colors are valid labels")
    }

    pub fn label(&self, v: usize) -> usize {
        self.label[v] as usize
    }

    pub fn size(&self, l: usize, i: usize) -> usize {
        let s = &self.start[i * (self.q + 1)..];
        (s[l + 1] - s[l]) as usize
    }

    /// Smallest relative basket size `min |B_li| / |V_i|`.
    pub fn lambda(&self) -> f64 {
        let mut min = usize::MAX;
        for i in 0..self.m {
            for l in 0..self.q {
                min = min.min(self.size(l, i));
            }
        }
        min as f64 / self.bs as f64
    }

    pub fn is_lambda_partition(&self, lambda: f64) -> bool {
        (0..self.m).all(|i| (0..self.q).all(|l| self.size(l, i) as f64 > lambda * self.bs as f64))
    }

    fn start(&self, i: usize, l: usize) -> usize {
        self.start[i * (self.q + 1) + l] as usize
    }
}

/// Per-chain basket bookkeeping.
#[derive(Clone, Debug)]
struct Tracker {
    trees: Vec<Fenwick>,
    // [l][i][j]
    counts: Vec<u32>,
}

impl Tracker {
    fn new(config: &Configuration, basket: &Basket) -> Self {
        let (m, q, bs) = (basket.m, basket.q, basket.bs);
        let mut trees = vec![Fenwick::new(bs); m * q];
        let mut counts = vec![0u32; q * m * q];
        for v in 0..config.n() {
            let (i, c, l) = (v / bs, config.color(v), basket.label(v));
            trees[i * q + c].add(basket.pos[v] as usize, 1);
            counts[(l * m + i) * q + c] += 1;
        }
        Tracker { trees, counts }
    }

    fn recolor(&mut self, basket: &Basket, v: usize, from: usize, to: usize) {
        if from == to {
            return;
        }
        let (m, q) = (basket.m, basket.q);
        let (i, l, p) = (v / basket.bs, basket.label(v), basket.pos[v] as usize);
        self.trees[i * q + from].add(p, -1);
        self.trees[i * q + to].add(p, 1);
        self.counts[(l * m + i) * q + from] -= 1;
        self.counts[(l * m + i) * q + to] += 1;
    }

    fn row(&self, basket: &Basket, l: usize, i: usize) -> &[u32] {
        let (m, q) = (basket.m, basket.q);
        &self.counts[(l * m + i) * q..(l * m + i + 1) * q]
    }
}

/// A full-mode pair with equal counts, a basket partition and per-block progress pointers.
#[derive(Clone, Debug)]
pub struct BasketPair {
    pair: Pair,
    basket: Basket,
    tx: Tracker,
    ty: Tracker,
    ptr: Vec<usize>,
    g: Vec<f64>,
}

impl BasketPair {
    pub fn new(pair: Pair, basket: Basket) -> Result<Self> {
        if pair.mode() != Mode::Full {
            return Err(PottsError::InvalidInput("basketwise coupling needs full mode".into()));
        }
        if !pair.counts_equal() {
            return Err(PottsError::InvalidStart("basketwise coupling needs equal proportion matrices".into()));
        }
        let params = pair.x().params().clone();
        if basket.m != params.m || basket.q != params.q || basket.label.len() != params.n {
            return Err(PottsError::InvalidInput("basket partition does not match the model".into()));
        }
        let tx = Tracker::new(pair.x().config().unwrap(), &basket);
        let ty = Tracker::new(pair.y().config().unwrap(), &basket);
        let q = params.q;
        let mut bp = BasketPair {
            pair,
            basket,
            tx,
            ty,
            ptr: vec![0; params.m],
            g: vec![0.0; q],
        };
        for i in 0..params.m {
            bp.advance(i);
        }
        Ok(bp)
    }

    pub fn pair(&self) -> &Pair {
        &self.pair
    }

    pub fn into_pair(self) -> Pair {
        self.pair
    }

    pub fn basket(&self) -> &Basket {
        &self.basket
    }

    /// First basket of block `i` whose proportions still differ (`q` when none).
    pub fn pointer(&self, i: usize) -> usize {
        self.ptr[i]
    }

    pub fn basket_row_equal(&self, l: usize, i: usize) -> bool {
        self.tx.row(&self.basket, l, i) == self.ty.row(&self.basket, l, i)
    }

    /// Whether every basket has the same color counts in both chains.
    pub fn basket_proportions_equal(&self) -> bool {
        self.tx.counts == self.ty.counts
    }

    pub fn coalesced(&self) -> bool {
        self.ptr.iter().all(|&p| p >= self.basket.q)
    }

    fn advance(&mut self, i: usize) {
        while self.ptr[i] < self.basket.q && self.basket_row_equal(self.ptr[i], i) {
            self.ptr[i] += 1;
        }
    }
}

/// One basketwise step. The block `i`, the old color `I` and the new color `J` are shared;
/// `v` is uniform among color-`I` vertices of block `i` in the first chain and `v~` is
/// matched to it:
/// (a) if `v` lies in an already coalesced basket, `v~` is uniform among color-`I`
///     vertices of that basket;
/// (b) if the current basket's counts differ at both `I` and `J`, `v~` is uniform among
///     color-`I` vertices of the current and later baskets;
/// (c) otherwise `v~` has the same rank as `v` among color-`I` vertices of the current
///     and later baskets, in (basket, vertex index) order.
pub fn basketwise_step<D: Draw>(bp: &mut BasketPair, draw: &mut D) {
    let (m, q, bs) = (bp.basket.m, bp.basket.q, bp.basket.bs);
    let i = draw.uniform_index(m);
    let l = bp.ptr[i];
    let row = bp.pair.x().counts().row(i);
    let r = draw.uniform_index(bs) as u32;
    let mut acc = 0;
    let mut old = q - 1;
    for (c, &cnt) in row.iter().enumerate() {
        acc += cnt;
        if r < acc {
            old = c;
            break;
        }
    }
    bp.pair.x().conditional_into(i, old, &mut bp.g);
    let new = draw.categorical(&bp.g);
    let v = bp.pair.x().indexed().unwrap().pick(i, old, draw);
    let lv = bp.basket.label(v);
    let (tx, ty) = (&bp.tx.trees[i * q + old], &bp.ty.trees[i * q + old]);
    let basket = &bp.basket;
    let w = if lv < l {
        let (s, e) = (basket.start(i, lv), basket.start(i, lv + 1));
        let base = ty.prefix(s);
        let c = ty.prefix(e) - base;
        ty.select(base + draw.uniform_index(c as usize) as i32)
    } else {
        let s = basket.start(i, l);
        let (rx, ry) = (bp.tx.row(basket, l, i), bp.ty.row(basket, l, i));
        let base = ty.prefix(s);
        if rx[old] != ry[old] && rx[new] != ry[new] {
            let c = ty.prefix(bs) - base;
            ty.select(base + draw.uniform_index(c as usize) as i32)
        } else {
            let theta = tx.prefix(basket.pos[v] as usize) - tx.prefix(s);
            ty.select(base + theta)
        }
    };
    let vt = basket.vertex_at[i * bs + w] as usize;
    bp.tx.recolor(&bp.basket, v, old, new);
    bp.ty.recolor(&bp.basket, vt, old, new);
    bp.pair.recolor_x(v, new);
    bp.pair.recolor_y(vt, new);
    bp.pair.tick();
    bp.advance(i);
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BasketReport {
    /// Pair time at which every basket coalesced.
    pub coalesce_time: Option<u64>,
    pub steps: u64,
}

/// Runs basketwise steps until all baskets coalesce or `cap` steps.
pub fn basketwise_run<D: Draw>(bp: &mut BasketPair, cap: u64, draw: &mut D) -> BasketReport {
    let mut steps = 0;
    while !bp.coalesced() && steps < cap {
        basketwise_step(bp, draw);
        steps += 1;
    }
    BasketReport {
        coalesce_time: bp.coalesced().then(|| bp.pair.time()),
        steps,
    }
}
