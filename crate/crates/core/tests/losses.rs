mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;
use taco_core::nn::gradcheck::max_relative_error;
use taco_core::training::{self_contrastive_loss, sup_contrastive_loss, Aggregation};

use common::*;

fn fixed_batch(seed: u64, n: usize, dim: usize, classes: usize) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut r);
    (unit_rows(uniform(&mut r, n * dim, -1.0, 1.0), dim), labels)
}

#[test]
fn self_loss_on_six_rows_matches_oracle_and_finite_differences() {
    let (z, _) = fixed_batch(1, 6, 4, 3);
    let pair_of = [3, 4, 5, 0, 1, 2];
    let positives: Vec<Vec<usize>> = pair_of.iter().map(|&p| vec![p]).collect();
    let tau = 0.5;
    let (r, g) = self_contrastive_loss(&z, 4, &pair_of, tau, Aggregation::Mean).unwrap();
    assert!((r.loss - oracle_loss(&z, 4, &positives, tau, Aggregation::Mean)).abs() < 1e-10);
    let err = max_relative_error(&z, &g, EPS, |v| self_contrastive_loss(v, 4, &pair_of, tau, Aggregation::Mean).unwrap().0.loss);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn sup_loss_on_eight_rows_three_classes_matches_oracle_and_finite_differences() {
    let (z, labels) = fixed_batch(2, 8, 5, 3);
    let tau = 0.7;
    for agg in [Aggregation::Mean, Aggregation::Sum] {
        let (r, g) = sup_contrastive_loss(&z, 5, &labels, tau, agg).unwrap();
        assert!((r.loss - oracle_loss(&z, 5, &label_positives(&labels), tau, agg)).abs() < 1e-10);
        let err = max_relative_error(&z, &g, EPS, |v| sup_contrastive_loss(v, 5, &labels, tau, agg).unwrap().0.loss);
        assert!(err < 1e-4, "{agg:?}: {err}");
    }
}

#[test]
fn gradients_hold_through_projector_and_normalization() {
    let mut r = rng(3);
    for probe in [LOSS_PROBE, LOSS_PROBE_SHARP] {
        for _ in 0..20 {
            assert!(check_projector_chain(&mut r, probe) < 1e-3);
            assert!(check_sup_loss(&mut r, probe) < 1e-4);
            assert!(check_self_loss(&mut r, probe) < 1e-4);
        }
    }
}

#[test]
fn loss_falls_as_the_positive_moves_closer() {
    // Anchor and positive rotate towards each other in the x-y plane; the
    // negatives sit on the z axis, orthogonal to both.
    for tau in [0.07, 0.7] {
        let mut previous = f64::INFINITY;
        for step in 0..5 {
            let angle = std::f64::consts::FRAC_PI_3 * (1.0 - step as f64 / 4.0);
            let z = [1.0, 0.0, 0.0, angle.cos(), angle.sin(), 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0];
            let loss = sup_contrastive_loss(&z, 3, &[0, 0, 1, 2], tau, Aggregation::Mean).unwrap().0.loss;
            assert!(loss <= previous, "tau {tau} step {step}: {loss} > {previous}");
            previous = loss;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn permuting_rows_permutes_terms_and_keeps_the_loss(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (z, dim, labels, tau) = random_batch(&mut r, 8, 8);
        let n = labels.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let pz: Vec<f64> = perm.iter().flat_map(|&i| z[i * dim..(i + 1) * dim].to_vec()).collect();
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let (a, _) = sup_contrastive_loss(&z, dim, &labels, tau, Aggregation::Mean).unwrap();
        let (b, _) = sup_contrastive_loss(&pz, dim, &pl, tau, Aggregation::Mean).unwrap();
        prop_assert!((a.loss - b.loss).abs() <= 1e-12);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((b.per_anchor[k] - a.per_anchor[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn scaling_temperature_with_inner_products_is_invisible(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut r = rng(seed);
        let (z, dim, labels, tau) = random_batch(&mut r, 8, 8);
        let scaled: Vec<f64> = z.iter().map(|v| v * c.sqrt()).collect();
        let a = sup_contrastive_loss(&z, dim, &labels, tau, Aggregation::Mean).unwrap().0.loss;
        let b = sup_contrastive_loss(&scaled, dim, &labels, tau * c, Aggregation::Mean).unwrap().0.loss;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        let n = labels.len();
        let pair_of: Vec<usize> = (0..n).map(|i| (i + 1 + r.gen_range(0..n - 1)) % n).collect();
        let a = self_contrastive_loss(&z, dim, &pair_of, tau, Aggregation::Mean).unwrap().0.loss;
        let b = self_contrastive_loss(&scaled, dim, &pair_of, tau * c, Aggregation::Mean).unwrap().0.loss;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn both_losses_match_the_double_loop_oracle(seed in any::<u64>()) {
        prop_assert!(loss_oracle_deviation(1, seed) <= 1e-10);
        prop_assert!(reduction_deviation(1, seed) <= 1e-10);
    }
}
