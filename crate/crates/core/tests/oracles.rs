//! Library results checked against independently computed values.

use nalgebra::DMatrix;
use rand::Rng;

use ssa_core::attention::{
    operator_norm, selective_attention, spikiness, specificity, AttentionLayer, Stream, TemperatureSpec,
};
use ssa_core::rng::stream;
use ssa_core::tasks::{
    err_map, make_denoising_batch_seeded, reference_graph, sample_graph_batch_seeded, transition_matrix,
};
use ssa_core::theory::{kappa_of, Token};
use ssa_core::training::graph::{GraphConfig, GraphModel, Variant};
use ssa_core::training::{Adam, AdamConfig};
use ssa_core::Matrix;

/// Causal attention written as plain loops, with position temperatures on
/// queries and a constant on keys.
fn loop_attention(x: &Matrix, layer: &AttentionLayer, alpha: f64, c: f64) -> Vec<Vec<f64>> {
    let (l, d) = x.shape();
    let proj = |w: &Matrix, i: usize| -> Vec<f64> {
        (0..d).map(|j| (0..d).map(|m| x.get(i, m) * w.get(m, j)).sum()).collect()
    };
    let sig = 1.0 / (1.0 + (-alpha).exp());
    let mut out = vec![vec![0.0; d]; l];
    for i in 0..l {
        let tau_q = 1.0 + sig * ((i + 1) as f64).ln();
        let q: Vec<f64> = proj(&layer.w_q, i).iter().map(|v| v * tau_q).collect();
        let logits: Vec<f64> = (0..=i)
            .map(|j| {
                let k = proj(&layer.w_k, j);
                c * q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()
            })
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|s| (s - top).exp()).sum();
        for (j, s) in logits.iter().enumerate() {
            let p = (s - top).exp() / z;
            for (o, v) in out[i].iter_mut().zip(proj(&layer.w_v, j)) {
                *o += p * v;
            }
        }
    }
    out
}

#[test]
fn tape_attention_matches_loops() {
    let mut rng = stream(11, "oracle/attention");
    for _ in 0..20 {
        let d = rng.random_range(2..=5);
        let l = rng.random_range(1..=9);
        let alpha = rng.random_range(-3.0..3.0);
        let c = rng.random_range(-2.0..2.0);
        let x = Matrix::random_normal(l, d, 1.0, &mut rng);
        let layer = AttentionLayer::random(d, 0.7, &mut rng)
            .with_temperature(Stream::Q, TemperatureSpec::position_aware(alpha))
            .unwrap()
            .with_temperature(Stream::K, TemperatureSpec::constant(c))
            .unwrap();
        let got = selective_attention(&x, &layer, None).unwrap();
        let want = loop_attention(&x, &layer, alpha, c);
        for (i, row) in want.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((got.get(i, j) - v).abs() < 1e-12, "({i},{j}): {} vs {v}", got.get(i, j));
            }
        }
    }
}

#[test]
fn operator_norm_matches_svd() {
    let mut rng = stream(3, "oracle/svd");
    for _ in 0..30 {
        let r = rng.random_range(1..=7);
        let c = rng.random_range(1..=7);
        let m = Matrix::random_normal(r, c, 1.5, &mut rng);
        let na = DMatrix::from_row_slice(r, c, m.data());
        let sigma = na.singular_values().max();
        let ours = operator_norm(&m).unwrap();
        assert!((ours - sigma).abs() <= 1e-8 * sigma.max(1.0), "{ours} vs {sigma}");
    }
}

#[test]
fn adam_two_steps_match_hand_trace() {
    // lr 0.1, betas (0.9, 0.95), eps 1e-8, decoupled decay 0.01.
    let cfg = AdamConfig {
        learning_rate: 0.1,
        beta1: 0.9,
        beta2: 0.95,
        eps: 1e-8,
        weight_decay: 0.01,
    };
    let mut w = Matrix::from_rows(&[[1.0, -2.0]]).unwrap();
    let mut adam = Adam::new(cfg, &[&w]);
    adam.step(&mut [&mut w], &[Matrix::from_rows(&[[0.5, -1.5]]).unwrap()], 0).unwrap();
    let first = [0.899000002, -1.8980000006666666];
    for (a, b) in w.data().iter().zip(first) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    adam.step(&mut [&mut w], &[Matrix::from_rows(&[[-0.25, 3.0]]).unwrap()], 1).unwrap();
    let second = [0.8712640578738274, -1.9324393955616865];
    for (a, b) in w.data().iter().zip(second) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert_eq!(adam.steps_taken(), 2);
}

#[test]
fn reference_transition_matrix_by_hand() {
    let p = transition_matrix(&reference_graph());
    let n = [4.0, 3.0, 3.0, 3.0, 2.0, 2.0, 2.0, 1.0];
    let edges = [(0, 1), (0, 2), (0, 3), (1, 4), (2, 5), (3, 6)];
    for i in 0..8 {
        for j in 0..8 {
            let linked = i == j || edges.contains(&(i, j)) || edges.contains(&(j, i));
            let want = if linked { 1.0 / n[i] } else { 0.0 };
            assert_eq!(p.matrix().get(i, j), want, "({i},{j})");
        }
    }
}

#[test]
fn sampled_labels_follow_transition_rows() {
    let p = transition_matrix(&reference_graph());
    let batch = sample_graph_batch_seeded(&p, 200_000, 5).unwrap();
    let mut counts = vec![vec![0.0; 8]; 8];
    for (q, y) in batch.queries().into_iter().zip(&batch.labels) {
        counts[q][*y] += 1.0;
    }
    for (i, row) in counts.iter().enumerate() {
        let total: f64 = row.iter().sum();
        // Each query token is last in about 1/8 of the sequences.
        assert!((total / 200_000.0 - 0.125).abs() < 0.005, "row {i} share {}", total / 200_000.0);
        for (j, c) in row.iter().enumerate() {
            let want = p.matrix().get(i, j);
            let se = (want * (1.0 - want) / total).sqrt().max(1e-9);
            assert!((c / total - want).abs() < 5.0 * se + 1e-12, "({i},{j}) {} vs {want}", c / total);
        }
    }
    for s in &batch.sequences[..100] {
        let mut sorted = s.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    }
}

#[test]
fn denoising_samples_have_the_stated_statistics() {
    let (l, sigma, alpha) = (64, 0.3, 0.25);
    let batch = make_denoising_batch_seeded(8, l, sigma, alpha, 2000, 9).unwrap();
    let mut signals = 0usize;
    let mut noise_sq = 0.0;
    let mut noise_n = 0usize;
    for s in &batch {
        assert_eq!(*s.signal_set.last().unwrap(), l - 1);
        assert_eq!(s.y.iter().sum::<f64>(), 1.0);
        assert_eq!(s.y[s.q], 1.0);
        signals += s.signal_set.len() - 1;
        for i in 0..l {
            let shift = if s.signal_set.contains(&i) { 1.0 } else { 0.0 };
            for (j, v) in s.x.row(i).iter().enumerate() {
                let z = if j == s.q { v - shift } else { *v };
                noise_sq += z * z;
                noise_n += 1;
            }
        }
    }
    let frac = signals as f64 / (batch.len() * (l - 1)) as f64;
    let se = (alpha * (1.0 - alpha) / (batch.len() * (l - 1)) as f64).sqrt();
    assert!((frac - alpha).abs() < 5.0 * se, "signal fraction {frac}");
    let std = (noise_sq / noise_n as f64).sqrt();
    assert!((std - sigma).abs() < 0.005, "noise std {std}");
}

#[test]
fn kappa_for_a_small_assignment() {
    use Token::{A, B};
    let k = kappa_of(&[B, A, B, B, A, B]);
    assert!(k[0].is_infinite());
    let want = [1.0, 2.0, 3.0, 1.5, 2.0];
    for (a, b) in k[1..].iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn spikiness_and_specificity_examples() {
    assert!((spikiness(&[0.25; 4]).unwrap() - 1.0).abs() < 1e-15);
    assert!((spikiness(&[0.0, 1.0, 0.0, 0.0, 0.0]).unwrap() - 0.2).abs() < 1e-15);
    // (1/2, 1/2, 0): ‖s‖² = 1/2, so 1 / (1/2 · 3).
    assert!((spikiness(&[0.5, 0.5, 0.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    let w = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
    // Wᵀq for q = (1, -1) is (-2, -2).
    assert!((specificity(&w, &[1.0, -1.0]).unwrap() - 8f64.sqrt()).abs() < 1e-15);
}

#[test]
fn err_map_example() {
    let a = Matrix::from_rows(&[[1.0, 0.0], [0.5, 0.5]]).unwrap();
    let b = Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
    assert!((err_map(&a, &b).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn expected_cross_entropy_matches_vocabulary_map() {
    let graph = reference_graph();
    let p = transition_matrix(&graph);
    let cfg = GraphConfig::default();
    let model = GraphModel::init(&graph, &cfg, Variant::GroupedQuery, 4).unwrap();
    assert!(model.is_position_free());
    let batch = sample_graph_batch_seeded(&p, 64, 4).unwrap();
    let got = model.expected_cross_entropy(&batch, p.matrix()).unwrap();
    let map = model.vocab_map().unwrap();
    let mut want = 0.0;
    for q in batch.queries() {
        for y in 0..8 {
            let pq = p.matrix().get(q, y);
            if pq > 0.0 {
                want -= pq * map.get(q, y).ln();
            }
        }
    }
    want /= batch.len() as f64;
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}
