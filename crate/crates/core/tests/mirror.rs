mod common;

use common::{kl, log_sum_exp, softmax};
use fmapg::mirror::{bregman_per_state, bregman_policy, exp_map_kl_residual, MirrorMap, StateWeights};
use nalgebra::{DMatrix, DVector};
use proptest::collection::vec;
use proptest::prelude::*;

/// Bregman divergence from the definition, with ∇φ taken by central differences.
fn bregman_by_definition(phi: impl Fn(&[f64]) -> f64, x: &[f64], y: &[f64]) -> f64 {
    let h = 1e-6;
    let grad: Vec<f64> = (0..y.len())
        .map(|i| {
            let mut up = y.to_vec();
            up[i] += h;
            let mut down = y.to_vec();
            down[i] -= h;
            (phi(&up) - phi(&down)) / (2.0 * h)
        })
        .collect();
    phi(x) - phi(y) - grad.iter().zip(x.iter().zip(y)).map(|(g, (a, b))| g * (a - b)).sum::<f64>()
}

fn pair(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (vec(lo..hi, n), vec(lo..hi, n))
}

#[test]
fn kl_worked_value() {
    let d = bregman_per_state(&MirrorMap::NegativeEntropy, &[0.5, 0.5], &[0.25, 0.75]).unwrap();
    let want = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((d - want).abs() < 1e-15);
    assert!((d - 0.143841).abs() < 1e-6);
}

#[test]
fn uniform_shift_residual() {
    let anchor = [0.3, -1.2, 2.0, 0.0];
    let z: Vec<f64> = anchor.iter().map(|v| v + 0.5).collect();
    let r = exp_map_kl_residual(&z, &anchor).unwrap();
    assert!(r.forward_kl.abs() < 1e-15);
    assert!((r.residual - (0.5f64.exp() - 1.5)).abs() < 1e-12);
}

#[test]
fn policy_divergence_matches_resummation() {
    let a = DMatrix::from_row_slice(2, 3, &[0.2, 0.3, 0.5, 0.6, 0.1, 0.3]);
    let b = DMatrix::from_row_slice(2, 3, &[0.4, 0.4, 0.2, 0.1, 0.8, 0.1]);
    let w = [0.7, 2.5];
    let weights = StateWeights::new(DVector::from_column_slice(&w)).unwrap();
    for map in [MirrorMap::SquaredEuclidean, MirrorMap::NegativeEntropy] {
        let mut want = 0.0;
        for s in 0..2 {
            for j in 0..3 {
                let (x, y): (f64, f64) = (a[(s, j)], b[(s, j)]);
                want += w[s]
                    * match map {
                        MirrorMap::SquaredEuclidean => 0.5 * (x - y) * (x - y),
                        _ => x * (x / y).ln() - x + y,
                    };
            }
        }
        let got = bregman_policy(&map, &weights, &a, &b).unwrap();
        assert!((got - want).abs() < 1e-12, "{map:?}: {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn divergences_are_nonnegative_and_vanish_on_the_diagonal((x, y) in pair(4, 0.01, 3.0)) {
        for map in [MirrorMap::SquaredEuclidean, MirrorMap::NegativeEntropy, MirrorMap::normalized_exponential(&y)] {
            prop_assert!(bregman_per_state(&map, &x, &y).unwrap() >= -1e-12);
            prop_assert!(bregman_per_state(&map, &x, &x).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn negative_entropy_matches_definition((x, y) in pair(3, 0.05, 2.0)) {
        let phi = |v: &[f64]| v.iter().map(|a| a * a.ln()).sum::<f64>();
        let got = bregman_per_state(&MirrorMap::NegativeEntropy, &x, &y).unwrap();
        prop_assert!((got - bregman_by_definition(phi, &x, &y)).abs() < 1e-6);
    }

    #[test]
    fn negative_entropy_on_simplex_is_kl((x, y) in pair(5, 0.05, 2.0)) {
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let p: Vec<f64> = x.iter().map(|v| v / sx).collect();
        let q: Vec<f64> = y.iter().map(|v| v / sy).collect();
        let got = bregman_per_state(&MirrorMap::NegativeEntropy, &p, &q).unwrap();
        prop_assert!((got - kl(&p, &q)).abs() < 1e-12);
    }

    #[test]
    fn exponential_map_matches_definition((z, anchor) in pair(4, -2.0, 2.0), y in vec(-2.0f64..2.0, 4)) {
        let lse_anchor = log_sum_exp(&anchor);
        let phi = |v: &[f64]| (log_sum_exp(v) - lse_anchor).exp();
        let got = bregman_per_state(&MirrorMap::normalized_exponential(&anchor), &z, &y).unwrap();
        prop_assert!((got - bregman_by_definition(phi, &z, &y)).abs() < 1e-6);
    }

    #[test]
    fn exponential_map_splits_into_forward_kl((z, anchor) in pair(4, -5.0, 5.0)) {
        let r = exp_map_kl_residual(&z, &anchor).unwrap();
        let x = log_sum_exp(&z) - log_sum_exp(&anchor);
        prop_assert!((r.forward_kl - kl(&softmax(&anchor), &softmax(&z))).abs() < 1e-12);
        prop_assert!((r.residual - (x.exp() - 1.0 - x)).abs() < 1e-9);
        prop_assert!(r.residual >= -1e-12);
    }

    #[test]
    fn single_state_policy_reduces_to_slice((x, y) in pair(3, 0.05, 1.0), w in 0.1f64..5.0) {
        let weights = StateWeights::new(DVector::from_element(1, w)).unwrap();
        let a = DMatrix::from_row_slice(1, 3, &x);
        let b = DMatrix::from_row_slice(1, 3, &y);
        let total = bregman_policy(&MirrorMap::NegativeEntropy, &weights, &a, &b).unwrap();
        let slice = bregman_per_state(&MirrorMap::NegativeEntropy, &x, &y).unwrap();
        prop_assert!((total - w * slice).abs() < 1e-12 * total.abs().max(1.0));
    }
}

#[test]
fn domain_and_configuration_errors() {
    assert!(bregman_per_state(&MirrorMap::NegativeEntropy, &[0.0, 1.0], &[0.5, 0.5]).is_err());
    let unanchored = MirrorMap::NormalizedExponential { anchor: None };
    assert!(bregman_per_state(&unanchored, &[0.0, 1.0], &[0.5, 0.5]).is_err());
    assert!(bregman_per_state(&MirrorMap::SquaredEuclidean, &[1.0], &[0.5, 0.5]).is_err());
}
