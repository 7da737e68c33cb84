use std::collections::HashMap;

use potts_core::error::PottsError;
use potts_core::exact::*;
use potts_core::model::{hamiltonian, Configuration, CountMatrix, ModelParams};
use potts_core::rng::replica_rng;
use rand::Rng;

fn params_bj(beta_j: f64, n: usize) -> ModelParams {
    let p = ModelParams::new(3, 2, 1.0, 2.0, 0.0, n).unwrap();
    p.with_beta(beta_j / p.j())
}

const BETA_JS: [f64; 3] = [0.0, 0.5, 1.4];

#[test]
fn state_space_sizes_and_multiplicities() {
    assert_eq!(enumerate_states(2, 1, 2).unwrap().len(), 3);
    let s = enumerate_states(6, 2, 3).unwrap();
    assert_eq!(s.len(), 100);
    let total: f64 = (0..s.len()).map(|i| s.multiplicity(i)).sum();
    assert!((total - 729.0).abs() < 1e-9);
    for (i, st) in s.states().iter().enumerate() {
        assert_eq!(s.index_of(st), Some(i));
    }
}

#[test]
fn kernel_rows_are_stochastic() {
    let s = enumerate_states(6, 2, 3).unwrap();
    for bj in BETA_JS {
        let k = transition_matrix(&s, &params_bj(bj, 6)).unwrap();
        assert!(k.max_row_sum_error() < 1e-14);
        assert!(k.detailed_balance_residual() <= 1e-12);
    }
}

#[test]
fn infinite_temperature_kernel_is_the_urn_chain() {
    let s = enumerate_states(6, 2, 3).unwrap();
    let k = transition_matrix(&s, &params_bj(0.0, 6)).unwrap();
    // pick a vertex uniformly, recolor it uniformly
    let mut urn = vec![vec![0.0; s.len()]; s.len()];
    for (a, st) in s.states().iter().enumerate() {
        for i in 0..2 {
            for j in 0..3 {
                if st.get(i, j) == 0 {
                    continue;
                }
                let pick = st.get(i, j) as f64 / 6.0;
                for l in 0..3 {
                    let mut next = st.clone();
                    next.apply_move(i, j, l);
                    urn[a][s.index_of(&next).unwrap()] += pick / 3.0;
                }
            }
        }
    }
    for a in 0..s.len() {
        for b in 0..s.len() {
            assert!((k.entry(a, b) - urn[a][b]).abs() < 1e-15);
        }
        assert!((k.entry(a, a) - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn stationary_matches_gibbs_over_configurations() {
    let s = enumerate_states(6, 2, 3).unwrap();
    for bj in BETA_JS {
        let p = params_bj(bj, 6);
        // sum exp(-beta H) over all 729 configurations, grouped by counts
        let mut w: HashMap<CountMatrix, f64> = HashMap::new();
        for code in 0..729u32 {
            let colors: Vec<u8> = (0..6).map(|v| (code / 3u32.pow(v) % 3) as u8).collect();
            let c = Configuration::new(2, 3, colors).unwrap().counts();
            let h = hamiltonian(&c.proportions(), &p);
            *w.entry(c).or_default() += (-p.beta * h).exp();
        }
        let z: f64 = w.values().sum();
        let pi = stationary_distribution(&s, &p).unwrap();
        for (i, st) in s.states().iter().enumerate() {
            assert!((pi[i] - w[st] / z).abs() < 1e-13, "bj {bj}");
        }
    }
}

#[test]
fn stationary_matches_power_iteration() {
    let s = enumerate_states(6, 2, 3).unwrap();
    let k = transition_matrix(&s, &params_bj(1.4, 6)).unwrap();
    let mut v = vec![1.0 / s.len() as f64; s.len()];
    for _ in 0..20_000 {
        v = k.apply_left(&v);
    }
    for (a, b) in v.iter().zip(k.stationary()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn tv_is_max_over_subsets() {
    let mut rng = replica_rng(12, 0);
    for _ in 0..20 {
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let p = norm((0..8).map(|_| rng.random::<f64>()).collect());
        let r = norm((0..8).map(|_| rng.random::<f64>()).collect());
        let best = (0u32..256)
            .map(|mask| (0..8).filter(|k| mask >> k & 1 == 1).map(|k| p[k] - r[k]).sum::<f64>().abs())
            .fold(0.0, f64::max);
        assert!((tv_distance(&p, &r).unwrap() - best).abs() < 1e-14);
    }
    assert!(tv_distance(&[0.5, 0.5], &[1.0]).is_err());
    assert!(tv_distance(&[0.5, 0.6], &[0.5, 0.5]).is_err());
}

#[test]
fn mixing_time_properties() {
    let s = enumerate_states(6, 2, 3).unwrap();
    let k = transition_matrix(&s, &params_bj(0.5, 6)).unwrap();
    let zero = mixing_time_exact(&k, 1.0, 10);
    assert_eq!(zero.t, Some(0));
    let mt = mixing_time_exact(&k, 0.25, 100_000);
    assert!(mt.worst_tv.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    let t = mt.t.unwrap();
    assert!(mt.worst_tv[t as usize] <= 0.25);
    assert!(mt.worst_tv[t as usize - 1] > 0.25);
    let capped = mixing_time_exact(&k, 1e-9, 3);
    assert_eq!(capped.t, None);
    assert_eq!(capped.worst_tv.len(), 4);
}

#[test]
fn mixing_time_regression_at_infinite_temperature() {
    let s = enumerate_states(6, 2, 3).unwrap();
    let k = transition_matrix(&s, &params_bj(0.0, 6)).unwrap();
    assert_eq!(mixing_time_exact(&k, 0.25, 10_000).t, Some(MIXING_T_BETA0));
}

const MIXING_T_BETA0: u64 = 10;

#[test]
fn full_chain_lumps_exactly() {
    for bj in BETA_JS {
        assert!(lumping_defect(&params_bj(bj, 6), 1_000).unwrap() < 1e-15);
    }
    assert!(matches!(
        lumping_defect(&params_bj(0.5, 60), 1_000_000),
        Err(PottsError::CapExceeded { .. })
    ));
}

#[test]
fn phase_transition_signature_at_n12() {
    let s = enumerate_states(12, 2, 3).unwrap();
    let radius = 0.35;
    let mass = |bj: f64| {
        let p = params_bj(bj, 12);
        mass_near_delta(&s, &stationary_distribution(&s, &p).unwrap(), radius)
    };
    let (hot, cold) = (mass(0.3), mass(3.0));
    assert!(hot > 0.25, "{hot}");
    assert!(cold < 1e-3 * hot, "{cold}");
}

#[test]
fn kernel_csv_layout() {
    let s = enumerate_states(2, 1, 2).unwrap();
    let p = ModelParams::new(2, 1, 1.0, 1.0, 0.3, 2).unwrap();
    let k = transition_matrix(&s, &p).unwrap();
    let mut buf = Vec::new();
    write_kernel_csv(&k, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("from,to,p"));
    let rows: usize = (0..k.len()).map(|i| k.row(i).len()).sum();
    assert_eq!(lines.count(), rows);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let s = enumerate_states(6, 2, 3).unwrap();
    assert!(transition_matrix(&s, &params_bj(0.5, 12)).is_err());
    assert!(enumerate_states(7, 2, 3).is_err());
    let c = CountMatrix::from_rows(&[vec![3, 0, 0], vec![0, 3, 0]]).unwrap();
    assert!(one_step_law_counts(&c, &params_bj(0.5, 12), None).is_err());
    assert!(matches!(
        one_step_law_counts(&c, &params_bj(0.5, 6), Some(0.1)),
        Err(PottsError::InvalidStart(_))
    ));
}
