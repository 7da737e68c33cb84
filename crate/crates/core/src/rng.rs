//! Random number plumbing.
//!
//! Every stochastic routine takes its randomness through the [`Draw`] trait. The
//! production generator is ChaCha8 ([`PottsRng`]); replica `r` of a run with master
//! seed `s` uses the key expanded from `s` by `seed_from_u64` and ChaCha stream `r`,
//! so replicas are independent counter-based streams and no global generator exists.
//!
//! [`enumerate_outcomes`] replays a routine along every branch of its draws and returns
//! the exact law of its output, which is how the coupling marginals are checked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type PottsRng = ChaCha8Rng;

/// Generator for replica `replica` of a run seeded with `master_seed`.
pub fn replica_rng(master_seed: u64, replica: u64) -> PottsRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replica);
    rng
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derived seed for sub-run `index` (grid cell, calibration set, ...) of `master_seed`.
pub fn mix_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index.wrapping_add(1)))
}

/// Source of the discrete draws used by the chains and couplings.
pub trait Draw {
    /// Index `k` with probability `weights[k] / sum(weights)`. Weights are finite and
    /// non-negative with a positive sum; zero-weight indices are never returned.
    fn categorical(&mut self, weights: &[f64]) -> usize;

    /// Uniform index in `0..len`, `len > 0`.
    fn uniform_index(&mut self, len: usize) -> usize;
}

impl Draw for ChaCha8Rng {
    fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let u = self.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (k, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last = k;
                if u < acc {
                    return k;
                }
            }
        }
        // u landed in the rounding gap at the top of the cumulative sum
        last
    }

    fn uniform_index(&mut self, len: usize) -> usize {
        self.random_range(0..len)
    }
}

struct ChoicePoint {
    chosen: usize,
    // outcome indices with positive probability, with their probabilities
    options: Vec<(usize, f64)>,
}

/// Replays a fixed prefix of choices and takes the first option afterwards.
pub struct ScriptedDraw {
    prefix: Vec<usize>,
    trail: Vec<ChoicePoint>,
}

impl ScriptedDraw {
    fn choose(&mut self, options: Vec<(usize, f64)>) -> usize {
        assert!(!options.is_empty(), "draw with no positive-weight outcome");
        let depth = self.trail.len();
        let chosen = if depth < self.prefix.len() {
            self.prefix[depth]
        } else {
            0
        };
        let outcome = options[chosen].0;
        self.trail.push(ChoicePoint { chosen, options });
        outcome
    }

    fn path_probability(&self) -> f64 {
        self.trail
            .iter()
            .map(|c| c.options[c.chosen].1)
            .product()
    }
}

impl Draw for ScriptedDraw {
    fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let options = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(k, &w)| (k, w / total))
            .collect();
        self.choose(options)
    }

    fn uniform_index(&mut self, len: usize) -> usize {
        let p = 1.0 / len as f64;
        self.choose((0..len).map(|k| (k, p)).collect())
    }
}

/// Exact law of `f`'s output, as a list of (output, probability) over all draw paths.
///
/// `f` must be deterministic given its draws. Paths are visited depth-first; equal
/// outputs are not merged.
pub fn enumerate_outcomes<T, F>(mut f: F) -> Vec<(T, f64)>
where
    F: FnMut(&mut ScriptedDraw) -> T,
{
    let mut out = Vec::new();
    let mut prefix: Vec<usize> = Vec::new();
    loop {
        let mut draw = ScriptedDraw {
            prefix: prefix.clone(),
            trail: Vec::new(),
        };
        let value = f(&mut draw);
        out.push((value, draw.path_probability()));

        let trail = draw.trail;
        let mut depth = trail.len();
        loop {
            if depth == 0 {
                return out;
            }
            depth -= 1;
            let point = &trail[depth];
            if point.chosen + 1 < point.options.len() {
                prefix = trail[..depth].iter().map(|c| c.chosen).collect();
                prefix.push(point.chosen + 1);
                break;
            }
        }
    }
}

/// Merges equal outputs of [`enumerate_outcomes`] into a sorted law.
pub fn merge_law<T: Ord>(mut law: Vec<(T, f64)>) -> Vec<(T, f64)> {
    law.sort_by(|a, b| a.0.cmp(&b.0));
    let mut merged: Vec<(T, f64)> = Vec::with_capacity(law.len());
    for (value, p) in law {
        match merged.last_mut() {
            Some((last, q)) if *last == value => *q += p,
            _ => merged.push((value, p)),
        }
    }
    merged
}
