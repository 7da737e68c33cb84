use nalgebra::DMatrix;
use potts_core::error::PottsError;
use potts_core::model::{ModelParams, ProportionMatrix};
use potts_core::rng::replica_rng;
use potts_core::theory::*;
use proptest::prelude::*;

fn params(beta: f64) -> ModelParams {
    ModelParams::new(3, 2, 1.0, 2.0, beta, 1000).unwrap()
}

fn beta_s_over_j(p: &ModelParams) -> f64 {
    critical_temperatures(p.q).unwrap().beta_s / p.j()
}

#[test]
fn beta_c_closed_forms() {
    let c3 = critical_temperatures(3).unwrap();
    assert!((c3.beta_c - 2.0 * 2f64.ln()).abs() < 1e-12);
    let c4 = critical_temperatures(4).unwrap();
    assert!((c4.beta_c - 1.5 * 3f64.ln()).abs() < 1e-12);
    let c2 = critical_temperatures(2).unwrap();
    assert_eq!(c2.beta_c, 1.0);
    assert!((c2.beta_s - 1.0).abs() < 1e-6);
}

// Values of the tangency solve, frozen. beta_s grows with q and stays below beta_c.
const BETA_S_TABLE: [(usize, f64); 8] = [
    (3, 1.372821788),
    (4, 1.609370544),
    (5, 1.782250904),
    (6, 1.918186248),
    (7, 2.030016952),
    (8, 2.124899504),
    (9, 2.207227388),
    (10, 2.279889280),
];

#[test]
fn beta_s_regression_table() {
    let mut prev = 1.0;
    for (q, expected) in BETA_S_TABLE {
        let c = critical_temperatures(q).unwrap();
        assert!((c.beta_s - expected).abs() < 1e-8, "q = {q}: {}", c.beta_s);
        assert!(c.beta_s < c.beta_c, "q = {q}");
        assert!(c.beta_s > prev);
        prev = c.beta_s;
    }
}

#[test]
fn beta_s_is_the_tangency_point() {
    let bs = critical_temperatures(3).unwrap().beta_s;
    assert!(!has_interior_zero(bs - 1e-6, 3));
    assert!(has_interior_zero(bs + 1e-6, 3));
    // at tangency the maximum of D over (1/q, 1) is zero
    assert!(max_spinodal_d(bs, 3).1.abs() < 1e-8);
}

#[test]
fn spinodal_slope_matches_finite_difference() {
    for q in [2, 3, 5] {
        for bj in [0.0, 0.7, 1.3, 2.1] {
            let c = 1.0 / q as f64;
            let h = 1e-5;
            let fd = (spinodal_d(c + h, bj, q) - spinodal_d(c - h, bj, q)) / (2.0 * h);
            assert!((fd - spinodal_d_slope_at_center(bj, q)).abs() < 1e-8, "q = {q}, bj = {bj}");
        }
    }
}

#[test]
fn spinodal_zero_exists_only_above_beta_s() {
    let bs = critical_temperatures(3).unwrap().beta_s;
    assert_eq!(largest_spinodal_zero(0.9 * bs, 3), None);
    let y = largest_spinodal_zero(1.1 * bs, 3).unwrap();
    assert!(y > 1.0 / 3.0 && y < 1.0);
    assert!(spinodal_d(y, 1.1 * bs, 3).abs() < 1e-12);
}

#[test]
fn xi_and_cutoff_time_values() {
    let p = params(0.0).with_n(100);
    let (xi, t) = xi_and_cutoff_time(&p).unwrap();
    assert_eq!(xi, 0.5);
    assert!((t - 50.0 * 100f64.ln()).abs() < 1e-9);
    let at_edge = p.with_beta(1.5 / p.j());
    assert!(matches!(xi_and_cutoff_time(&at_edge), Err(PottsError::OutOfRegime(_))));
}

proptest! {
    #[test]
    fn contraction_constant_identity(beta_j in 0.0f64..1.49, n in 1usize..100_000, a in 0.0f64..3.0, db in 0.01f64..3.0) {
        let p = ModelParams::new(3, 1, a, a + db, 0.0, n).unwrap();
        let p = p.with_beta(beta_j / p.j());
        let (xi, _) = xi_and_cutoff_time(&p).unwrap();
        let lhs = contraction_constant(&p);
        let rhs = 1.0 - 1.0 / (2.0 * xi * n as f64);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn rate_function_is_kl_to_uniform(seed in any::<u64>(), m in 1usize..4, q in 2usize..6) {
        let mut rng = replica_rng(seed, 0);
        let z = random_simplex_point(m, q, &mut rng);
        let rows: Vec<Vec<f64>> = (0..m).map(|i| z.row(i).to_vec()).collect();
        let r = rate_function(&rows).unwrap();
        prop_assert!(r >= 0.0);
        let kl: f64 = rows
            .iter()
            .map(|row| row.iter().map(|&x| x * x.ln()).sum::<f64>() + (q as f64).ln())
            .sum::<f64>()
            / m as f64;
        prop_assert!((r - kl).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_is_a_root(bj in 0.0f64..3.0) {
        let u = largest_fixed_point(bj, 3, FixedPointConvention::DriftConsistent);
        let res = u - fixed_point_rhs(u, bj, 3, FixedPointConvention::DriftConsistent);
        prop_assert!(res.abs() <= 1e-9);
    }
}

/// Largest root of `u = (1 - e^{-2 bj u}) / (1 + (q-1) e^{-2 bj u})` by a dense scan.
fn dense_grid_root(bj: f64, q: usize) -> f64 {
    let f = |u: f64| {
        let e = (-2.0 * bj * u).exp();
        u - (1.0 - e) / (1.0 + (q as f64 - 1.0) * e)
    };
    let steps = 1_000_000;
    let mut best = 0.0;
    for k in 1..steps {
        let (u0, u1) = (k as f64 / steps as f64, (k + 1) as f64 / steps as f64);
        if f(u0) <= 0.0 && f(u1) > 0.0 {
            best = u0;
        }
    }
    best
}

#[test]
fn macrostate_matches_dense_grid_root() {
    let bj = 1.2 * beta_c(3);
    let ms = equilibrium_macrostates(bj, 3, 2);
    assert!((ms.u - dense_grid_root(bj, 3)).abs() < 2e-6);
    // the repeated row of nu^1 sits at the largest zero of D
    let y = largest_spinodal_zero(bj, 3).unwrap();
    assert!((ms.scaled_nu(0).get(0, 0) - y).abs() < 1e-8);
    let total: f64 = ms.psi.iter().sum();
    assert!((total - 0.5).abs() < 1e-12);
}

#[test]
fn macrostate_conventions_against_spinodal() {
    let bs = critical_temperatures(3).unwrap().beta_s;
    for bj in [0.5, 0.9 * bs, 1.05 * bs, 1.2 * beta_c(3), 2.5] {
        let c = macrostate_consistency(bj, 3);
        assert!(c.drift_consistent_agrees, "bj = {bj}");
    }
    // the other exponent predicts no ordered state just above beta_s
    assert!(!macrostate_consistency(1.05 * bs, 3).as_printed_agrees);
}

#[test]
fn aggregate_variation_converges_and_contracts() {
    let p = params(0.0);
    let p = p.with_beta(0.9 * beta_s_over_j(&p));
    let mut rng = replica_rng(7, 0);
    for _ in 0..50 {
        let z = random_simplex_point(2, 3, &mut rng);
        let r = aggregate_g_variation_line(&z, &p, 400).unwrap();
        assert!(r.refinement_change <= 1e-6, "{r:?}");
        assert!(r.ratio < 1.0, "{r:?}");
    }
}

#[test]
fn aggregate_variation_rejects_bad_input() {
    let p = params(0.3);
    assert!(aggregate_g_variation_line(&ProportionMatrix::delta(2, 3), &p, 1).is_err());
    assert!(aggregate_g_variation_line(&ProportionMatrix::delta(3, 3), &p, 10).is_err());
}

#[test]
fn g_bound_holds_well_below_beta_s() {
    let p = params(0.0);
    let p = p.with_beta(0.5 * beta_s_over_j(&p));
    let r = verify_g_upper_bound(&p, 10_000, 3).unwrap();
    assert_eq!(r.violations, 0);
    assert!(r.qualifying_samples > 0);
    assert!(r.max_slack < 0.0);
}

#[test]
fn g_bound_fails_just_above_beta_s() {
    let p = params(0.0);
    let bs = beta_s_over_j(&p);
    let p = p.with_beta(1.05 * bs);
    let (y, d) = max_spinodal_d(p.beta_j(), 3);
    assert!(d > 0.0);
    let row = [y, (1.0 - y) / 2.0, (1.0 - y) / 2.0];
    let z = ProportionMatrix::new(2, 3, [row, row].concat()).unwrap();
    let slack = g_upper_bound_slack(&z, &p).unwrap();
    assert!((slack - d).abs() < 1e-12, "slack {slack}, D {d}");
}

#[test]
fn lipschitz_ratio_near_delta() {
    let p = params(0.0);
    let p = p.with_beta(0.5 * beta_s_over_j(&p));
    let r = local_lipschitz_ratio(&p, 1e-3, 2000, 11);
    assert!(r <= 2.0 * p.beta_j() / 3.0 + 1e-2, "ratio {r}");
    assert!(r > 0.0);
}

fn assert_covariance_shape(lam: &DMatrix<f64>, m: usize, q: usize) {
    assert_eq!(lam.nrows(), m * q);
    assert!((lam - lam.transpose()).amax() < 1e-12);
    let min_eig = lam.clone().symmetric_eigen().eigenvalues.min();
    assert!(min_eig > -1e-10, "min eigenvalue {min_eig}");
    for r in 0..m * q {
        for i in 0..m {
            let s: f64 = (0..q).map(|j| lam[(r, i * q + j)]).sum();
            assert!(s.abs() < 1e-12);
        }
    }
}

#[test]
fn clt_covariance_structure() {
    let p = params(0.0);
    let bs = beta_s_over_j(&p);
    for f in [0.0, 0.3, 0.9] {
        let lam = clt_covariance(&p.with_beta(f * bs)).unwrap();
        assert_covariance_shape(&lam, 2, 3);
    }
}

#[test]
fn clt_covariance_formulas_agree() {
    let p = params(0.0);
    let p = p.with_beta(0.6 * beta_s_over_j(&p));
    let a = clt_covariance(&p).unwrap();
    let b = clt_covariance_direct(&p).unwrap();
    assert!((a - b).amax() < 1e-9);
}

#[test]
fn clt_covariance_high_temperature_limit() {
    let p = params(0.0);
    let hi = clt_covariance_high_temperature(2, 3);
    assert!((clt_covariance(&p).unwrap() - &hi).amax() < 1e-15);
    let near = clt_covariance(&p.with_beta(1e-6)).unwrap();
    assert!((near - &hi).amax() < 1e-5);
    // multinomial covariance of one uniform draw
    assert!((hi[(0, 0)] - 2.0 / 9.0).abs() < 1e-15);
    assert!((hi[(0, 1)] + 1.0 / 9.0).abs() < 1e-15);
    assert_eq!(hi[(0, 3)], 0.0);
}

#[test]
fn clt_covariance_out_of_regime() {
    let p = params(0.0);
    let at_c = p.with_beta(beta_c(3) / p.j());
    assert!(matches!(clt_covariance(&at_c), Err(PottsError::OutOfRegime(_))));
}
