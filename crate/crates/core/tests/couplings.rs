mod common;

use common::{law_distance, law_of, marginal, TOL};
use potts_core::couplings::*;
use potts_core::dynamics::{config_with_counts, initial_config, Chain, Start};
use potts_core::error::PottsError;
use potts_core::exact::{one_step_law_config, one_step_law_counts};
use potts_core::model::{Configuration, CountMatrix, ModelParams};
use potts_core::rng::{replica_rng, Draw};
use potts_core::theory::critical_temperatures;
use proptest::prelude::*;

fn params(beta: f64, n: usize) -> ModelParams {
    ModelParams::new(3, 2, 1.0, 2.0, beta, n).unwrap()
}

fn counts(rows: &[&[u32]]) -> CountMatrix {
    CountMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn cfg(m: usize, colors: &[u8]) -> Configuration {
    Configuration::new(m, 3, colors.to_vec()).unwrap()
}

fn half_beta_s(n: usize) -> ModelParams {
    let p = params(0.0, n);
    p.with_beta(0.5 * critical_temperatures(3).unwrap().beta_s / p.j())
}

fn lumped_pair(p: &ModelParams, a: &CountMatrix, b: &CountMatrix) -> Pair {
    Pair::new(Chain::from_counts(p, a.clone()).unwrap(), Chain::from_counts(p, b.clone()).unwrap()).unwrap()
}

fn full_pair(p: &ModelParams, a: &Configuration, b: &Configuration) -> Pair {
    Pair::new(Chain::from_config(p, a.clone()).unwrap(), Chain::from_config(p, b.clone()).unwrap()).unwrap()
}

fn joint_counts_law<F>(pair: &Pair, step: F) -> Vec<((CountMatrix, CountMatrix), f64)>
where
    F: Fn(&mut Pair, &mut potts_core::rng::ScriptedDraw),
{
    law_of(|d| {
        let mut p = pair.clone();
        step(&mut p, d);
        (p.x().counts().clone(), p.y().counts().clone())
    })
}

fn joint_config_law<F>(pair: &Pair, step: F) -> Vec<((Configuration, Configuration), f64)>
where
    F: Fn(&mut Pair, &mut potts_core::rng::ScriptedDraw),
{
    law_of(|d| {
        let mut p = pair.clone();
        step(&mut p, d);
        (p.x().config().unwrap().clone(), p.y().config().unwrap().clone())
    })
}

fn assert_counts_marginals(pair: &Pair, joint: &[((CountMatrix, CountMatrix), f64)], rho: Option<f64>) {
    let p = pair.x().params();
    let mx = marginal(joint, |(x, _)| x.clone());
    let my = marginal(joint, |(_, y)| y.clone());
    assert!(law_distance(&mx, &one_step_law_counts(pair.x().counts(), p, rho).unwrap()) < TOL);
    assert!(law_distance(&my, &one_step_law_counts(pair.y().counts(), p, rho).unwrap()) < TOL);
}

fn assert_config_marginals(pair: &Pair, joint: &[((Configuration, Configuration), f64)], rho: Option<f64>) {
    let p = pair.x().params();
    let mx = marginal(joint, |(x, _)| x.clone());
    let my = marginal(joint, |(_, y)| y.clone());
    assert!(law_distance(&mx, &one_step_law_config(pair.x().config().unwrap(), p, rho).unwrap()) < TOL);
    assert!(law_distance(&my, &one_step_law_config(pair.y().config().unwrap(), p, rho).unwrap()) < TOL);
}

const BETAS: [f64; 3] = [0.0, 0.5, 1.4];

#[test]
fn greedy_marginals_by_enumeration() {
    let (a, b) = (cfg(2, &[0, 0, 1, 1, 2, 2]), cfg(2, &[0, 1, 1, 2, 2, 2]));
    for beta in BETAS {
        let pair = full_pair(&params(beta, 6), &a, &b);
        let joint = joint_config_law(&pair, |p, d| greedy_step(p, d));
        assert_config_marginals(&pair, &joint, None);
    }
}

#[test]
fn synchronized_marginals_by_enumeration() {
    let (a, b) = (counts(&[&[2, 1, 0], &[0, 1, 2]]), counts(&[&[1, 1, 1], &[1, 2, 0]]));
    for beta in BETAS {
        let p = params(beta, 6);
        for rho in [None, Some(0.75)] {
            let r = rho.unwrap_or(f64::INFINITY);
            let pair = lumped_pair(&p, &a, &b);
            let joint = joint_counts_law(&pair, |p, d| synchronized_step(p, r, d).unwrap());
            assert_counts_marginals(&pair, &joint, rho);
            let pair = full_pair(&p, &config_with_counts(&a).unwrap(), &config_with_counts(&b).unwrap());
            let joint = joint_config_law(&pair, |p, d| synchronized_step(p, r, d).unwrap());
            assert_config_marginals(&pair, &joint, rho);
        }
    }
}

#[test]
fn coordinatewise_marginals_by_enumeration() {
    let (a, b) = (counts(&[&[2, 1, 0], &[0, 1, 2]]), counts(&[&[1, 1, 1], &[1, 2, 0]]));
    for beta in BETAS {
        let p = params(beta, 6);
        for k in 1..3 {
            let pair = lumped_pair(&p, &a, &b);
            let joint = joint_counts_law(&pair, |p, d| coordinatewise_step(p, k, d));
            assert_counts_marginals(&pair, &joint, None);
            let pair = full_pair(&p, &config_with_counts(&a).unwrap(), &config_with_counts(&b).unwrap());
            let joint = joint_config_law(&pair, |p, d| coordinatewise_step(p, k, d));
            assert_config_marginals(&pair, &joint, None);
        }
    }
}

#[test]
fn basketwise_marginals_by_enumeration() {
    // equal counts, different configurations
    let (a, b) = (cfg(2, &[0, 1, 2, 0, 0, 1]), cfg(2, &[2, 1, 0, 1, 0, 0]));
    for labels in [vec![0u8, 0, 1, 2, 2, 1], vec![0, 1, 2, 0, 1, 2]] {
        for beta in BETAS {
            let p = params(beta, 6);
            let basket = Basket::from_labels(2, 3, labels.clone()).unwrap();
            let bp = BasketPair::new(full_pair(&p, &a, &b), basket).unwrap();
            let joint = law_of(|d| {
                let mut bp = bp.clone();
                basketwise_step(&mut bp, d);
                (bp.pair().x().config().unwrap().clone(), bp.pair().y().config().unwrap().clone())
            });
            assert_config_marginals(bp.pair(), &joint, None);
        }
    }
}

#[test]
fn optimal_coupling_disagreement_is_total_variation() {
    let mu = [0.5, 0.2, 0.2, 0.1];
    let nu = [0.1, 0.3, 0.25, 0.35];
    let tv = total_variation(&mu, &nu);
    let law = optimal_coupling_law(&mu, &nu);
    let off: f64 = (0..4).flat_map(|x| (0..4).map(move |y| (x, y))).filter(|(x, y)| x != y).map(|(x, y)| law[x * 4 + y]).sum();
    assert!((off - tv).abs() < TOL);
    let mut rng = replica_rng(5, 0);
    let trials = 100_000;
    let mut miss = 0u64;
    for _ in 0..trials {
        miss += !optimal_coupling_sample(&mu, &nu, &mut rng).unwrap().diag as u64;
    }
    let f = miss as f64 / trials as f64;
    let se = (tv * (1.0 - tv) / trials as f64).sqrt();
    assert!((f - tv).abs() <= 3.0 * se, "{f} vs {tv}");
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

proptest! {
    #[test]
    fn semi_independent_marginals(
        raw_mu in prop::collection::vec(0.01f64..1.0, 5),
        raw_nu in prop::collection::vec(0.01f64..1.0, 5),
        mask in 1u32..32,
    ) {
        let (mu, nu) = (simplex(&raw_mu), simplex(&raw_nu));
        let a: Vec<bool> = (0..5).map(|k| mask >> k & 1 == 1).collect();
        let law = semi_independent_law(&mu, &nu, &a);
        for x in 0..5 {
            let row: f64 = (0..5).map(|y| law[x * 5 + y]).sum();
            let col: f64 = (0..5).map(|y| law[y * 5 + x]).sum();
            prop_assert!((row - mu[x]).abs() < 1e-12);
            prop_assert!((col - nu[x]).abs() < 1e-12);
        }
    }

    #[test]
    fn semi_independent_on_everything_is_optimal(
        raw_mu in prop::collection::vec(0.0f64..1.0, 4),
        raw_nu in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        prop_assume!(raw_mu.iter().sum::<f64>() > 0.0 && raw_nu.iter().sum::<f64>() > 0.0);
        let (mu, nu) = (simplex(&raw_mu), simplex(&raw_nu));
        let semi = semi_independent_law(&mu, &nu, &[true; 4]);
        let opt = optimal_coupling_law(&mu, &nu);
        for (s, o) in semi.iter().zip(&opt) {
            prop_assert!((s - o).abs() < 1e-12);
        }
    }
}

#[test]
fn semi_independent_sampler_matches_law() {
    let (mu, nu) = ([0.4, 0.1, 0.3, 0.2], [0.1, 0.4, 0.2, 0.3]);
    let a = [true, false, true, false];
    let law = semi_independent_law(&mu, &nu, &a);
    let sampled = law_of(|d| {
        let s = semi_independent_sample(&mu, &nu, &a, d).unwrap();
        (s.x, s.y)
    });
    let exact: Vec<((usize, usize), f64)> = (0..16).map(|e| ((e / 4, e % 4), law[e])).filter(|(_, w)| *w > 0.0).collect();
    assert!(law_distance(&sampled, &exact) < TOL);
    assert!(semi_independent_sample(&mu, &nu, &[false; 4], &mut replica_rng(0, 0)).is_err());
}

#[test]
fn greedy_keeps_identical_pairs_together() {
    let p = half_beta_s(60);
    let mut rng = replica_rng(6, 0);
    let x = initial_config(&p, &Start::UniformRandom, &mut rng).unwrap();
    let mut pair = full_pair(&p, &x, &x);
    for _ in 0..20_000 {
        greedy_step(&mut pair, &mut rng);
        assert!(pair.configs_equal());
    }
}

#[test]
fn greedy_does_not_expand_hamming_distance_one() {
    let p = half_beta_s(300);
    let mut rng = replica_rng(7, 0);
    let trials = 100_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..trials {
        let x = initial_config(&p, &Start::UniformRandom, &mut rng).unwrap();
        let mut y = x.clone();
        let v = rng.uniform_index(p.n);
        let c = (y.color(v) + 1 + rng.uniform_index(2)) % 3;
        y.set_color(v, c);
        let mut pair = full_pair(&p, &x, &y);
        greedy_step(&mut pair, &mut rng);
        let d = pair.hamming().unwrap() as f64 - 1.0;
        sum += d;
        sq += d * d;
    }
    let mean = sum / trials as f64;
    let se = ((sq / trials as f64 - mean * mean) / trials as f64).sqrt();
    assert!(mean <= 4.0 * se, "mean change {mean}, se {se}");
}

#[test]
fn synchronized_keeps_equal_counts_together() {
    let p = half_beta_s(60);
    let mut rng = replica_rng(8, 0);
    let x = initial_config(&p, &Start::UniformRandom, &mut rng).unwrap();
    let mut perm = x.colors().to_vec();
    perm[..30].reverse();
    let y = Configuration::new(2, 3, perm).unwrap();
    let mut pair = full_pair(&p, &x, &y);
    for _ in 0..20_000 {
        synchronized_step(&mut pair, f64::INFINITY, &mut rng).unwrap();
        assert!(pair.counts_equal());
    }
    let mut lumped = lumped_pair(&p, &x.counts(), &x.counts());
    for _ in 0..20_000 {
        synchronized_step(&mut lumped, 0.5, &mut rng).unwrap();
        assert!(lumped.counts_equal());
    }
}

#[test]
fn synchronized_rejects_start_outside_ball() {
    let p = half_beta_s(60);
    let mono = CountMatrix::monochromatic(&p, 0).unwrap();
    let mut pair = lumped_pair(&p, &mono, &CountMatrix::delta_nearest(&p));
    let r = synchronized_step(&mut pair, 0.1, &mut replica_rng(0, 0));
    assert!(matches!(r, Err(PottsError::InvalidStart(_))));
}

#[test]
fn coalesced_baskets_stay_coalesced() {
    let p = half_beta_s(60);
    let mut rng = replica_rng(9, 0);
    let x = initial_config(&p, &Start::UniformRandom, &mut rng).unwrap();
    let mut colors = x.colors().to_vec();
    colors[..30].reverse();
    colors[30..].reverse();
    let y = Configuration::new(2, 3, colors).unwrap();
    let basket = Basket::from_config(&initial_config(&p, &Start::UniformRandom, &mut rng).unwrap());
    let mut bp = BasketPair::new(full_pair(&p, &x, &y), basket).unwrap();
    let mut seen_progress = false;
    for _ in 0..200_000 {
        let before: Vec<usize> = (0..2).map(|i| bp.pointer(i)).collect();
        basketwise_step(&mut bp, &mut rng);
        assert!(bp.pair().counts_equal());
        for i in 0..2 {
            assert!(bp.pointer(i) >= before[i]);
            for l in 0..bp.pointer(i).min(3) {
                assert!(bp.basket_row_equal(l, i));
            }
            seen_progress |= bp.pointer(i) > before[i];
        }
        if bp.coalesced() {
            break;
        }
    }
    assert!(seen_progress);
    assert!(bp.coalesced());
    assert!(bp.basket_proportions_equal());
}

#[test]
fn basketwise_needs_equal_counts() {
    let p = half_beta_s(6);
    let (a, b) = (cfg(2, &[0, 0, 0, 1, 1, 1]), cfg(2, &[0, 0, 1, 1, 1, 1]));
    let basket = Basket::from_config(&a);
    assert!(matches!(BasketPair::new(full_pair(&p, &a, &b), basket), Err(PottsError::InvalidStart(_))));
    let lumped = lumped_pair(&p, &a.counts(), &a.counts());
    assert!(BasketPair::new(lumped, Basket::from_config(&a)).is_err());
}

#[test]
fn basket_lambda() {
    let b = Basket::from_labels(2, 3, vec![0, 0, 1, 2, 0, 1, 1, 2, 0, 2]).unwrap();
    assert!((b.lambda() - 0.2).abs() < TOL);
    assert!(b.is_lambda_partition(0.19));
    assert!(!b.is_lambda_partition(0.2));
    assert!(Basket::from_labels(2, 3, vec![0, 3]).is_err());
}

#[test]
fn coordinatewise_run_validates_thresholds() {
    let p = half_beta_s(60);
    let mut pair = lumped_pair(&p, &CountMatrix::delta_nearest(&p), &CountMatrix::delta_nearest(&p));
    let mut rng = replica_rng(0, 0);
    assert!(coordinatewise_run(&mut pair, &[1.0], 10, &mut rng).is_err());
    assert!(coordinatewise_run(&mut pair, &[1.0, 0.0], 10, &mut rng).is_err());
    let r = coordinatewise_run(&mut pair, &[1.0, 1.0], 10, &mut rng).unwrap();
    assert_eq!(r.t_cc, Some(0));
    assert_eq!(r.u_measured, 0.0);
}

#[test]
fn coordinatewise_run_meets_its_thresholds() {
    let p = half_beta_s(600);
    let mut rng = replica_rng(10, 0);
    let a = CountMatrix::nearest_to(&p, &potts_core::model::ProportionMatrix::new(2, 3, vec![0.4, 0.3, 0.3, 0.3, 0.4, 0.3]).unwrap());
    let mut pair = lumped_pair(&p, &a, &CountMatrix::delta_nearest(&p));
    let y = default_thresholds(&p);
    let r = coordinatewise_run(&mut pair, &y, 100 * 600, &mut rng).unwrap();
    let t_cc = r.t_cc.expect("stages finished");
    assert_eq!(t_cc, r.stage_times.iter().map(|s| s.unwrap()).sum::<u64>());
    assert!(column_gap_within(&pair, 1, y[1]));
    assert_eq!(pair.time(), t_cc);
}

#[test]
fn overall_coupling_with_equal_starts_is_immediate() {
    let p = half_beta_s(60);
    let x = initial_config(&p, &Start::UniformRandom, &mut replica_rng(1, 0)).unwrap();
    let run = overall_coupling_run(x.clone(), x, &p, &OverallBudgets::default(), &default_thresholds(&p), &mut replica_rng(2, 0)).unwrap();
    assert!(run.success);
    assert_eq!(run.coalesce_basket_time, Some(0));
    assert_eq!(run.t_cc, Some(0));
}

#[test]
fn overall_coupling_stage_bookkeeping() {
    let p = half_beta_s(120);
    let (_, t_xi) = potts_core::theory::xi_and_cutoff_time(&p).unwrap();
    let budgets = OverallBudgets::default();
    let y = default_thresholds(&p);
    let mut successes = 0;
    for r in 0..20 {
        let mut rng = replica_rng(11, r);
        let x = Configuration::monochromatic(&p, 0).unwrap();
        let z = initial_config(&p, &Start::UniformRandom, &mut rng).unwrap();
        let run = overall_coupling_run(x, z, &p, &budgets, &y, &mut rng).unwrap();
        let b = run.boundaries;
        assert!(b.windows(2).all(|w| w[0] <= w[1]), "{b:?}");
        assert_eq!(b[0], 30);
        assert_eq!(b[1], 60);
        assert_eq!(b[2], 60 + t_xi.ceil() as u64);
        if let Some(t) = run.t_cc {
            assert_eq!(t, run.stage_times.iter().map(|s| s.unwrap()).sum::<u64>());
            assert_eq!(b[3] - b[2], t);
        }
        if run.success {
            successes += 1;
            assert_eq!(run.coalesce_basket_time, Some(b[5]));
            assert!(run.coalesce_s_time.unwrap() <= b[4]);
            assert!(run.coalesced_by(b[5] as f64));
            assert!(!run.coalesced_by(b[5] as f64 - 1.0));
        }
    }
    assert!(successes > 0);
}

#[test]
fn overall_coupling_rejects_wrong_threshold_count() {
    let p = half_beta_s(60);
    let x = Configuration::monochromatic(&p, 0).unwrap();
    let y = Configuration::monochromatic(&p, 1).unwrap();
    assert!(overall_coupling_run(x, y, &p, &OverallBudgets::default(), &[1.0], &mut replica_rng(0, 0)).is_err());
}
