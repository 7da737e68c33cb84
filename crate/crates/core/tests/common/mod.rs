//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use potts_core::rng::{enumerate_outcomes, merge_law, ScriptedDraw};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const TOL: f64 = 1e-12;

/// Pearson chi-square p-value of observed counts against exact probabilities.
/// Cells with expected count below 5 are pooled into one cell.
pub fn chi_square_p<K: Ord>(observed: &BTreeMap<K, u64>, expected: &[(K, f64)], total: u64) -> f64 {
    let mut stat = 0.0;
    let mut cells = 0usize;
    let (mut pooled_o, mut pooled_e) = (0.0, 0.0);
    let mut seen = 0u64;
    for (k, p) in expected {
        let o = *observed.get(k).unwrap_or(&0) as f64;
        seen += o as u64;
        let e = p * total as f64;
        if e < 5.0 {
            pooled_o += o;
            pooled_e += e;
        } else {
            stat += (o - e).powi(2) / e;
            cells += 1;
        }
    }
    assert_eq!(seen, total, "sampler produced an outcome with zero exact probability");
    if pooled_e > 0.0 {
        stat += (pooled_o - pooled_e).powi(2) / pooled_e.max(1e-300);
        cells += 1;
    }
    if cells < 2 {
        return 1.0;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

/// Exact law of `f` with equal outputs merged.
pub fn law_of<T: Ord, F: FnMut(&mut ScriptedDraw) -> T>(f: F) -> Vec<(T, f64)> {
    merge_law(enumerate_outcomes(f))
}

/// Max absolute difference between two sorted laws (missing entries count as 0).
pub fn law_distance<T: Ord + Clone>(a: &[(T, f64)], b: &[(T, f64)]) -> f64 {
    let mut all: BTreeMap<T, (f64, f64)> = BTreeMap::new();
    for (k, p) in a {
        all.entry(k.clone()).or_default().0 += p;
    }
    for (k, p) in b {
        all.entry(k.clone()).or_default().1 += p;
    }
    all.values().map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Marginal of component `pick` of a joint law.
pub fn marginal<T: Ord + Clone, U, F: Fn(&U) -> T>(joint: &[(U, f64)], pick: F) -> Vec<(T, f64)> {
    let mut out: BTreeMap<T, f64> = BTreeMap::new();
    for (u, p) in joint {
        *out.entry(pick(u)).or_insert(0.0) += p;
    }
    out.into_iter().collect()
}
