//! Invariants over random inputs.

use proptest::prelude::*;
use rand::RngCore;

use ssa_core::attention::{operator_norm, spikiness, truncated_softmax};
use ssa_core::autodiff::{softmax_rows, Mask};
use ssa_core::rng::stream;
use ssa_core::tasks::{err_map, make_denoising_batch_seeded, reference_graph, sample_graph_batch_seeded, transition_matrix};
use ssa_core::theory::{sparsity_for_temperature, temperature_for_sparsity, top_entry_scaled};
use ssa_core::training::{Adam, AdamConfig};
use ssa_core::Matrix;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-20.0..20.0f64, r * c).prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

fn probabilities() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 1..40).prop_filter_map("all zero", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_are_distributions(m in matrix(8, 8), causal in any::<bool>()) {
        let mask = if causal { Mask::Causal } else { Mask::Full };
        let s = softmax_rows(&m, mask);
        for i in 0..s.rows() {
            let row = s.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
            if causal {
                prop_assert!(row[(i + 1).min(row.len())..].iter().all(|p| *p == 0.0));
            }
        }
    }

    #[test]
    fn spikiness_lies_between_one_hot_and_uniform(p in probabilities()) {
        let s = spikiness(&p).unwrap();
        let l = p.len() as f64;
        prop_assert!(s >= 1.0 / l - 1e-12 && s <= 1.0 + 1e-12, "{s} outside [1/{l}, 1]");
    }

    #[test]
    fn truncation_keeps_the_requested_count(scores in prop::collection::vec(-5.0..5.0f64, 1..30), frac in 0.0..1.0f64) {
        let keep = 1 + ((scores.len() - 1) as f64 * frac) as usize;
        let t = truncated_softmax(&scores, keep).unwrap();
        prop_assert_eq!(t.iter().filter(|p| **p > 0.0).count(), keep);
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sparsity_shrinks_as_temperature_grows(
        n in 4usize..2000,
        pow in 0.1..0.9f64,
        gamma in 0.1..3.0f64,
        tau in 0.01..5.0f64,
        dt in 0.01..2.0f64,
    ) {
        let k1 = sparsity_for_temperature(tau, n, pow, gamma).unwrap();
        let k2 = sparsity_for_temperature(tau + dt, n, pow, gamma).unwrap();
        prop_assert!(k2 <= k1 + 1e-15);
        prop_assert!(k2 > 0.0);
        if tau >= 1.0 {
            prop_assert!(k1 <= 1.0 + 1e-15);
        }
        let t1 = top_entry_scaled(n, pow, gamma, tau).unwrap();
        let t2 = top_entry_scaled(n, pow, gamma, tau + dt).unwrap();
        prop_assert!(t2 >= t1 - 1e-15);
    }

    #[test]
    fn temperature_and_sparsity_invert(n in 4usize..2000, pow in 0.1..0.9f64, gamma in 0.1..3.0f64, tau in 1.0..5.0f64) {
        let kappa = sparsity_for_temperature(tau, n, pow, gamma).unwrap();
        let back = temperature_for_sparsity(kappa, n, pow, gamma).unwrap();
        prop_assert!((back - tau).abs() < 1e-8 * tau, "{back} vs {tau}");
    }

    #[test]
    fn operator_norm_scales_and_dominates_entries(m in matrix(6, 6), c in -4.0..4.0f64) {
        let n = operator_norm(&m).unwrap();
        prop_assert!(n + 1e-9 >= m.max_abs());
        prop_assert!(n <= m.frobenius_norm() + 1e-9);
        let scaled = operator_norm(&m.scale(c)).unwrap();
        prop_assert!((scaled - c.abs() * n).abs() <= 1e-8 * (1.0 + scaled));
    }

    #[test]
    fn err_map_is_a_metric_on_maps(a in matrix(5, 5)) {
        let p = softmax_rows(&a, Mask::Full);
        let q = softmax_rows(&a.scale(0.5), Mask::Full);
        prop_assert_eq!(err_map(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(err_map(&p, &q).unwrap(), err_map(&q, &p).unwrap());
        prop_assert!(err_map(&p, &q).unwrap() <= 2.0 + 1e-12);
    }

    #[test]
    fn adam_leaves_parameters_alone_without_gradient(m in matrix(4, 4)) {
        let mut w = m.clone();
        let mut adam = Adam::new(AdamConfig::default(), &[&w]);
        let zero = Matrix::zeros(m.rows(), m.cols());
        adam.step(&mut [&mut w], &[zero], 0).unwrap();
        prop_assert_eq!(w, m);
    }

    #[test]
    fn generators_are_deterministic(seed in any::<u64>()) {
        let p = transition_matrix(&reference_graph());
        prop_assert_eq!(sample_graph_batch_seeded(&p, 16, seed).unwrap(), sample_graph_batch_seeded(&p, 16, seed).unwrap());
        let a = make_denoising_batch_seeded(4, 8, 0.3, 0.25, 3, seed).unwrap();
        let b = make_denoising_batch_seeded(4, 8, 0.3, 0.25, 3, seed).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.x, &y.x);
            prop_assert_eq!(&x.signal_set, &y.signal_set);
        }
        prop_assert_eq!(stream(seed, "a").next_u64(), stream(seed, "a").next_u64());
        prop_assert_ne!(stream(seed, "a").next_u64(), stream(seed, "b").next_u64());
    }
}
