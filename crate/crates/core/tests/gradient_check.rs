//! Analytic head gradients against central finite differences.

use lus_core::model::{bce_with_logit, FeatureSequence, RecurrentHead};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Forward pass written out independently of the library: plain loops, gates [z, r, n].
fn reference_loss(head: &RecurrentHead, seq: &FeatureSequence, target: f64, drop: Option<&Array1<f64>>) -> f64 {
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut xs: Vec<Vec<f64>> = (0..seq.features.nrows())
        .filter(|&t| seq.mask[t])
        .map(|t| seq.features.row(t).to_vec())
        .collect();
    for layer in &head.layers {
        let h_dim = layer.u.ncols();
        let mut h = vec![0.0; h_dim];
        let mut out = Vec::new();
        for x in &xs {
            let mut a = vec![0.0; 3 * h_dim];
            let mut c = vec![0.0; 3 * h_dim];
            for (i, (ai, ci)) in a.iter_mut().zip(c.iter_mut()).enumerate() {
                *ai = layer.b[i] + x.iter().enumerate().map(|(j, v)| layer.w[[i, j]] * v).sum::<f64>();
                *ci = layer.rb[i] + h.iter().enumerate().map(|(j, v)| layer.u[[i, j]] * v).sum::<f64>();
            }
            h = (0..h_dim)
                .map(|k| {
                    let z = sig(a[k] + c[k]);
                    let r = sig(a[h_dim + k] + c[h_dim + k]);
                    let n = (a[2 * h_dim + k] + r * c[2 * h_dim + k]).tanh();
                    z * h[k] + (1.0 - z) * n
                })
                .collect();
            out.push(h.clone());
        }
        xs = out;
    }
    let mut last = xs.last().cloned().unwrap();
    if let Some(m) = drop {
        for (v, k) in last.iter_mut().zip(m.iter()) {
            *v *= k;
        }
    }
    let logit = head.dense_b + last.iter().zip(head.dense_w.iter()).map(|(a, b)| a * b).sum::<f64>();
    bce_with_logit(logit, target)
}

fn toy(seed: u64) -> (RecurrentHead, FeatureSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = RecurrentHead::new(7, &[4, 3], &mut rng);
    // non-zero biases so every parameter gets a gradient
    for layer in &mut head.layers {
        layer.b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        layer.rb.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    head.dense_b = 0.1;
    let features = Array2::from_shape_simple_fn((5, 7), || rng.random_range(-1.0..1.0));
    (head, FeatureSequence { features, mask: vec![true; 5] })
}

fn check(seed: u64, target: f64, drop: Option<Array1<f64>>) {
    let (head, seq) = toy(seed);
    let (loss, _, grad) = head.loss_and_grad(&seq, target, drop.as_ref());
    assert!((loss - reference_loss(&head, &seq, target, drop.as_ref())).abs() < 1e-12);

    let analytic = grad.to_flat();
    let theta = head.to_flat();
    let eps = 1e-5;
    let mut probe = head.clone();
    let mut worst: f64 = 0.0;
    let (mut diff2, mut sum2) = (0.0, 0.0);
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + eps;
        probe.set_flat(&t);
        let up = reference_loss(&probe, &seq, target, drop.as_ref());
        t[i] = theta[i] - eps;
        probe.set_flat(&t);
        let down = reference_loss(&probe, &seq, target, drop.as_ref());
        let numeric = (up - down) / (2.0 * eps);
        // components below 1e-6 sit at the cancellation-noise floor of the difference quotient
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        diff2 += (analytic[i] - numeric).powi(2);
        sum2 += (analytic[i] + numeric).powi(2);
    }
    assert!(worst <= 1e-4, "worst elementwise relative error {worst}");
    let global = (diff2 / sum2).sqrt();
    assert!(global <= 1e-6, "norm-wise relative error {global}");
}

#[test]
fn positive_target() {
    check(1, 1.0, None);
}

#[test]
fn negative_target() {
    check(2, 0.0, None);
}

#[test]
fn with_dropout_mask() {
    check(3, 1.0, Some(Array1::from(vec![2.0, 0.0, 2.0])));
}

#[test]
fn padded_rows_get_no_gradient_path() {
    let (head, seq) = toy(4);
    let mut padded = FeatureSequence { features: Array2::zeros((9, 7)), mask: vec![false; 9] };
    padded.features.slice_mut(ndarray::s![..5, ..]).assign(&seq.features);
    padded.mask[..5].fill(true);
    let (a, _, ga) = head.loss_and_grad(&seq, 1.0, None);
    let (b, _, gb) = head.loss_and_grad(&padded, 1.0, None);
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}
