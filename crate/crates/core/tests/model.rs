mod common;

use common::{brute_force_counts, central_difference, gaussian, rng, separable_dataset};
use ffdlab::linalg::Matrix;
use ffdlab::model::{
    classification_report, cross_entropy, predict, predict_with, softmax, train, Activation, MlpConfig, MlpModel,
    ModelError,
};
use ffdlab::Execution;
use proptest::prelude::*;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| gaussian(&mut r)).collect())
}

fn small(input: usize, hidden: usize, blocks: usize, act: Activation, seed: u64) -> MlpConfig {
    MlpConfig {
        input_dim: input,
        hidden_dim: hidden,
        n_residual_blocks: blocks,
        activation: act,
        seed,
        ..Default::default()
    }
}

/// Forward pass written with plain loops over the parameter layout.
fn oracle_logits(m: &MlpModel, x: &[f64]) -> Vec<f64> {
    let f = |v: f64| match m.config.activation {
        Activation::Relu => v.max(0.0),
        Activation::LeakyRelu { slope } => {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        }
    };
    let layer = |input: &[f64], w: &Matrix, b: &Matrix| -> Vec<f64> {
        (0..w.cols()).map(|j| b[(0, j)] + (0..w.rows()).map(|i| input[i] * w[(i, j)]).sum::<f64>()).collect()
    };
    let p = &m.params;
    let h: Vec<f64> = layer(x, &p[0], &p[1]).into_iter().map(f).collect();
    let mut z = layer(&h, &p[2], &p[3]);
    for b in 0..m.config.n_residual_blocks {
        let k = 4 + 4 * b;
        let u: Vec<f64> = layer(&z, &p[k], &p[k + 1]).into_iter().map(f).collect();
        let v = layer(&u, &p[k + 2], &p[k + 3]);
        z = z.iter().zip(v).map(|(a, c)| a + f(c)).collect();
    }
    let o = 4 + 4 * m.config.n_residual_blocks;
    layer(&z, &p[o], &p[o + 1])
}

/// Central difference refined until two successive steps agree. Away from an
/// activation kink that happens at once; near one, the step shrinks until the
/// stencil no longer straddles it.
fn smooth_difference(f: &impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let mut h = 1e-4;
    let mut prev = central_difference(f, x, i, h);
    while h > 1e-8 {
        h /= 10.0;
        let next = central_difference(f, x, i, h);
        if (next - prev).abs() <= 1e-6 * next.abs().max(prev.abs()) + 1e-8 {
            return next;
        }
        prev = next;
    }
    prev
}

#[test]
fn forward_matches_a_loop_implementation() {
    for (i, act) in [Activation::Relu, Activation::LeakyRelu { slope: 0.1 }].into_iter().enumerate() {
        let mut m = MlpModel::new(small(5, 7, 2, act, i as u64)).unwrap();
        // non-zero biases so every term is exercised
        for (j, p) in m.params.iter_mut().enumerate() {
            if p.rows() == 1 {
                p.as_mut_slice().iter_mut().enumerate().for_each(|(k, v)| *v = 0.01 * (j + k) as f64 - 0.05);
            }
        }
        let x = random_matrix(9, 5, 40 + i as u64);
        let (logits, probs) = m.forward(&x).unwrap();
        for r in 0..9 {
            let want = oracle_logits(&m, x.row(r));
            for c in 0..3 {
                assert!((logits[(r, c)] - want[c]).abs() < 1e-12 * (1.0 + want[c].abs()));
            }
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_match_finite_differences(
        input in 1usize..5,
        hidden in 1usize..6,
        blocks in 0usize..3,
        leaky in proptest::bool::ANY,
        seed in 0u64..10_000,
    ) {
        let act = if leaky { Activation::LeakyRelu { slope: 0.05 } } else { Activation::Relu };
        let mut model = MlpModel::new(small(input, hidden, blocks, act, seed)).unwrap();
        // fresh biases are all zero, which parks inactive rows exactly on a kink
        let mut r = rng(seed + 2);
        for p in model.params.iter_mut().filter(|p| p.rows() == 1) {
            p.as_mut_slice().iter_mut().for_each(|v| *v = 0.3 * gaussian(&mut r));
        }
        let x = random_matrix(6, input, seed + 1);
        let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let (loss, grads) = model.loss_and_gradients(&x, &labels).unwrap();
        prop_assert!((loss - model.loss(&x, &labels).unwrap()).abs() < 1e-12);
        for (t, g) in grads.iter().enumerate() {
            let flat = model.params[t].as_slice().to_vec();
            for k in 0..flat.len() {
                let f = |theta: &[f64]| {
                    let mut m = model.clone();
                    m.params[t].as_mut_slice().copy_from_slice(theta);
                    m.loss(&x, &labels).unwrap()
                };
                let numeric = smooth_difference(&f, &flat, k);
                let analytic = g.as_slice()[k];
                prop_assert!(
                    (numeric - analytic).abs() <= 1e-5 * numeric.abs().max(analytic.abs()) + 1e-6,
                    "tensor {} entry {}: {} vs {}", t, k, numeric, analytic
                );
            }
        }
    }

    #[test]
    fn report_matches_explicit_counting(seed in 0u64..10_000, n in 1usize..200) {
        let mut r = rng(seed);
        let y: Vec<usize> = (0..n).map(|_| (gaussian(&mut r).abs() * 1.3) as usize % 3).collect();
        let p: Vec<usize> = (0..n).map(|_| (gaussian(&mut r).abs() * 1.3) as usize % 3).collect();
        let rep = classification_report(&y, &p).unwrap();
        let mut correct = 0;
        for c in 0..3 {
            let (tp, fp, fn_) = brute_force_counts(&y, &p, c);
            correct += tp;
            let m = &rep.per_class[c];
            prop_assert_eq!(m.support, tp + fn_);
            let prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let rec = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            prop_assert!((m.precision - prec).abs() < 1e-15 && (m.recall - rec).abs() < 1e-15);
            prop_assert_eq!(m.precision_zero_division, tp + fp == 0);
            let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
            prop_assert!((m.f1 - f1).abs() < 1e-15);
        }
        prop_assert!((rep.accuracy - correct as f64 / n as f64).abs() < 1e-15);
        prop_assert_eq!(rep.confusion_matrix.iter().flatten().sum::<usize>(), n);
    }
}

#[test]
fn zeroed_blocks_reduce_to_the_plain_network() {
    let mut deep = MlpModel::new(small(4, 6, 3, Activation::Relu, 2)).unwrap();
    for b in 0..3 {
        deep.zero_block(b);
    }
    let mut flat = MlpModel::new(small(4, 6, 0, Activation::Relu, 2)).unwrap();
    flat.params[..4].clone_from_slice(&deep.params[..4]);
    flat.params[4..].clone_from_slice(&deep.params[16..]);
    let x = random_matrix(20, 4, 3);
    assert_eq!(deep.forward(&x).unwrap().0, flat.forward(&x).unwrap().0);

    deep.zero_output_layer();
    let probs = deep.forward(&x).unwrap().1;
    assert!(probs.as_slice().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn softmax_and_cross_entropy_are_stable() {
    let logits = Matrix::from_rows(&[vec![1000.0, 0.0, -1000.0], vec![2.0, 2.0, 2.0], vec![0.5, -1.0, 3.0]]);
    let p = softmax(&logits);
    assert!(p.as_slice().iter().all(|v| v.is_finite()));
    assert!((p[(0, 0)] - 1.0).abs() < 1e-15);
    let ce = cross_entropy(&logits, &[0, 1, 2]);
    let lse = (0.5f64.exp() + (-1.0f64).exp() + 3.0f64.exp()).ln();
    let want = (0.0 + 3f64.ln() + (lse - 3.0)) / 3.0;
    assert!((ce - want).abs() < 1e-12);
}

#[test]
fn training_is_deterministic_and_learns() {
    let (x, y) = separable_dataset(300, 6, 1.0, 11);
    let cfg = MlpConfig { epochs: 30, batch_size: 32, ..small(6, 16, 1, Activation::Relu, 5) };
    let a = train(&x, &y, &cfg).unwrap();
    let b = train(&x, &y, &cfg).unwrap();
    assert_eq!(a, b);
    let h = &a.loss_history;
    assert_eq!(h.len(), 30);
    assert!(h[29] < 0.5 * h[0], "{h:?}");
    let acc = predict(&a, &x).unwrap().iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / 300.0;
    assert!(acc > 0.9, "{acc}");

    let other = train(&x, &y, &MlpConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.params, other.params);
}

#[test]
fn prediction_is_chunk_and_mode_independent() {
    let model = MlpModel::new(small(3, 8, 2, Activation::LeakyRelu { slope: 0.01 }, 1)).unwrap();
    let x = random_matrix(1000, 3, 2);
    let seq = predict_with(&model, &x, Execution::Sequential).unwrap();
    let par = predict_with(&model, &x, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    let logits = model.forward(&x).unwrap().0;
    let whole: Vec<usize> = (0..1000)
        .map(|i| {
            let r = logits.row(i);
            (0..3).fold(0, |b, c| if r[c] > r[b] { c } else { b })
        })
        .collect();
    assert_eq!(seq, whole);

    let reloaded = MlpModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(predict(&reloaded, &x).unwrap(), seq);
}

#[test]
fn rejects_invalid_inputs() {
    let x = random_matrix(10, 3, 1);
    let cfg = MlpConfig { batch_size: 4, ..small(3, 4, 1, Activation::Relu, 1) };
    assert!(matches!(train(&x, &[0, 1, 2, 3, 0, 1, 2, 0, 1, 2], &cfg), Err(ModelError::InvalidLabel(3))));
    assert!(matches!(train(&x, &[0; 9], &cfg), Err(ModelError::LengthMismatch(10, 9))));
    let big = MlpConfig { batch_size: 11, ..cfg.clone() };
    assert!(matches!(train(&x, &[0; 10], &big), Err(ModelError::TooFewRows { .. })));
    let m = MlpModel::new(cfg.clone()).unwrap();
    assert!(matches!(m.forward(&random_matrix(2, 4, 1)), Err(ModelError::DimensionMismatch { .. })));
    assert!(MlpModel::new(MlpConfig { hidden_dim: 0, ..cfg.clone() }).is_err());
    assert!(MlpModel::new(MlpConfig { beta1: 1.0, ..cfg }).is_err());
    assert!(MlpModel::from_json("{\"format\":\"other\",\"version\":1}").is_err());
    assert!(classification_report(&[], &[]).is_err());
}
