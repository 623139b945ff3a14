mod common;

use common::TestRng;
use fmapg::bandits::{
    best_grid_point, exp3_step, grid_search_eta, iw_reward_estimate, lb_iw_loss_estimate, run_bandit, sexp3_step,
    Algorithm, BanditFamily, BernoulliBandit, Exp3Variant, GridPoint,
};
use fmapg::exec::Exec;
use proptest::collection::vec;
use proptest::prelude::*;

fn distribution(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

#[test]
fn worked_updates() {
    let est = iw_reward_estimate(&[0.5, 0.5], 0, 1.0).unwrap();
    assert_eq!(est, vec![2.0, 0.0]);
    assert_eq!(lb_iw_loss_estimate(&[0.5, 0.5], 0, 1.0).unwrap(), vec![0.0, 0.0]);
    assert_eq!(lb_iw_loss_estimate(&[0.5, 0.5], 0, 0.0).unwrap(), vec![2.0, 0.0]);

    let e = (0.01f64).exp();
    let exp3 = exp3_step(&[0.5, 0.5], &est, 0.005, Exp3Variant::Gain).unwrap();
    assert!((exp3[0] - e / (e + 1.0)).abs() < 1e-15);
    let s = sexp3_step(&[0.5, 0.5], &est, 0.005).unwrap();
    assert!((s[0] - 1.01 / 2.01).abs() < 1e-15);
    assert!((s[0] - 0.502488).abs() < 1e-6);
}

#[test]
fn estimators_are_unbiased() {
    // E[r̂(a)] = mean(a), averaged over arm and reward draws.
    let probs = [0.2, 0.5, 0.3];
    let means = [0.9, 0.4, 0.1];
    let mut rng = TestRng(77);
    let n = 400_000;
    let mut gain = [0.0; 3];
    let mut loss = [0.0; 3];
    for _ in 0..n {
        let u = rng.uniform(0.0, 1.0);
        let arm = if u < 0.2 { 0 } else if u < 0.7 { 1 } else { 2 };
        let r = f64::from(u8::from(rng.uniform(0.0, 1.0) < means[arm]));
        for (a, x) in iw_reward_estimate(&probs, arm, r).unwrap().iter().enumerate() {
            gain[a] += x / n as f64;
        }
        for (a, x) in lb_iw_loss_estimate(&probs, arm, r).unwrap().iter().enumerate() {
            loss[a] += x / n as f64;
        }
    }
    for a in 0..3 {
        assert!((gain[a] - means[a]).abs() < 0.02, "arm {a}: {}", gain[a]);
        assert!((loss[a] - (1.0 - means[a])).abs() < 0.02, "arm {a}: {}", loss[a]);
    }
}

#[test]
fn zero_probability_arm_is_an_error() {
    assert!(iw_reward_estimate(&[1.0, 0.0], 1, 1.0).is_err());
    assert!(sexp3_step(&[0.5, 0.5], &[-300.0, -300.0], 1.0).is_err());
}

#[test]
fn deterministic_arms_have_small_regret() {
    let bandit = BernoulliBandit::from_means(vec![1.0, 0.0]).unwrap();
    let trace = run_bandit(&bandit, Algorithm::Sexp3, 0.005, 10_000, 3).unwrap();
    assert!(trace.final_regret() / 10_000.0 < 0.5);
    let single = BernoulliBandit::from_means(vec![0.3]).unwrap();
    let trace = run_bandit(&single, Algorithm::Iwexp3, 0.5, 100, 3).unwrap();
    assert!(trace.regret.iter().all(|&r| r == 0.0));
}

#[test]
fn runs_are_reproducible() {
    let bandit = BernoulliBandit::sample(10, 0.5, 42).unwrap();
    assert_eq!(bandit, BernoulliBandit::sample(10, 0.5, 42).unwrap());
    assert!(bandit.means.iter().all(|m| (0.25..=0.75).contains(m)));
    for alg in Algorithm::ALL {
        let a = run_bandit(&bandit, alg, 0.05, 2_000, 9).unwrap();
        let b = run_bandit(&bandit, alg, 0.05, 2_000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.regret.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn grid_search_independent_of_execution() {
    let family = BanditFamily { k: 5, gap: 0.5, env_seeds: vec![1, 2, 3] };
    let grid = [0.5, 0.05, 0.005];
    let seq = grid_search_eta(&family, Algorithm::Sexp3, &grid, 500, 4, Exec::Sequential).unwrap();
    let par = grid_search_eta(&family, Algorithm::Sexp3, &grid, 500, 4, Exec::Parallel).unwrap();
    assert_eq!(seq, par);
    let (eta, table) = seq;
    let best = table.iter().map(|g| g.mean_final_regret).fold(f64::INFINITY, f64::min);
    assert_eq!(table.iter().find(|g| g.eta == eta).unwrap().mean_final_regret, best);
    let single = grid_search_eta(&family, Algorithm::Iwexp3, &[0.05], 100, 4, Exec::Sequential).unwrap();
    assert_eq!(single.0, 0.05);
}

#[test]
fn ties_go_to_the_smaller_step() {
    let point = |eta| GridPoint { eta, mean_final_regret: 1.0, final_regrets: vec![1.0] };
    let table = [point(0.5), point(0.005), point(0.05)];
    assert_eq!(best_grid_point(&table).unwrap().eta, 0.005);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn updates_stay_on_the_simplex(raw in vec(0.01f64..1.0, 2..12), arm_pick in 0usize..64, r in 0.0f64..=1.0, eta in 1e-5f64..0.5) {
        let p = distribution(&raw);
        let arm = arm_pick % p.len();
        let gain = iw_reward_estimate(&p, arm, r).unwrap();
        let loss = lb_iw_loss_estimate(&p, arm, r).unwrap();
        for next in [
            exp3_step(&p, &gain, eta, Exp3Variant::Gain).unwrap(),
            exp3_step(&p, &loss, eta, Exp3Variant::Loss).unwrap(),
            sexp3_step(&p, &gain, eta).unwrap(),
        ] {
            prop_assert!(next.iter().all(|&x| x >= 0.0));
            prop_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn centred_estimates_rescale_the_step(raw in vec(0.05f64..1.0, 2..8), arm_pick in 0usize..64, eta in 1e-4f64..0.05) {
        // p(1 + η′(r̂ − b)) ∝ p(1 + η r̂) for η′ = η / (1 + ηb)
        let p = distribution(&raw);
        let arm = arm_pick % p.len();
        let est = iw_reward_estimate(&p, arm, 1.0).unwrap();
        let b: f64 = p.iter().zip(&est).map(|(p, r)| p * r).sum();
        let centred: Vec<f64> = est.iter().map(|r| r - b).collect();
        let direct = sexp3_step(&p, &est, eta).unwrap();
        let via_centred = sexp3_step(&p, &centred, eta / (1.0 + eta * b)).unwrap();
        for (x, y) in direct.iter().zip(&via_centred) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
