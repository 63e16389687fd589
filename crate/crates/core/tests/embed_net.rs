mod common;

use permlattice::embed::{EmbedNet, EmbedNetParams, EmbedShape, Mode, LEAKY_SLOPE};
use permlattice::gradcheck::{central_difference, max_relative_error};
use permlattice::Image;
use proptest::prelude::*;
use rand::Rng;

fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Image {
    let mut r = common::rng(seed);
    Image::from_fn(h, w, c, |_, _, _| r.gen_range(-1.0..1.0))
}

/// Cross-correlation with an explicitly zero-padded copy of the input.
fn naive_conv(x: &Image, weight: &[f64], bias: &[f64], out_c: usize) -> Image {
    let (h, w, c) = x.shape();
    let mut padded = vec![vec![vec![0.0; c]; w + 2]; h + 2];
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                padded[y + 1][xx + 1][ch] = x.get(y, xx, ch);
            }
        }
    }
    Image::from_fn(h, w, out_c, |y, xx, o| {
        let mut acc = bias[o];
        for i in 0..c {
            for ky in 0..3 {
                for kx in 0..3 {
                    acc += weight[o * c * 9 + i * 9 + ky * 3 + kx] * padded[y + ky][xx + kx][i];
                }
            }
        }
        acc
    })
}

fn naive_leaky(x: &Image) -> Image {
    x.map(|v| v.max(0.0) + 0.2 * v.min(0.0))
}

fn randomized(shape: EmbedShape, seed: u64) -> EmbedNet {
    let mut params = EmbedNetParams::init(shape, seed).unwrap();
    let mut r = common::rng(seed + 100);
    for l in &mut params.layers {
        l.bias.iter_mut().for_each(|b| *b = r.gen_range(-0.2..0.2));
    }
    if let Some(bn) = &mut params.bn {
        bn.gamma.iter_mut().for_each(|g| *g = r.gen_range(0.5..1.5));
        bn.beta.iter_mut().for_each(|b| *b = r.gen_range(-0.5..0.5));
        bn.running_mean.iter_mut().for_each(|m| *m = r.gen_range(-0.3..0.3));
        bn.running_var.iter_mut().for_each(|v| *v = r.gen_range(0.5..2.0));
    }
    EmbedNet::new(params)
}

#[test]
fn eval_forward_matches_naive_composition() {
    let net = randomized(EmbedShape { in_channels: 2, out_channels: 3, batch_norm: true }, 4);
    let x = random_image(9, 5, 5, 2);
    let p = net.params();
    let mut z = x.clone();
    for (i, l) in p.layers.iter().enumerate() {
        z = naive_conv(&z, &l.weight, &l.bias, l.out_channels);
        if i < 2 {
            z = naive_leaky(&z);
        }
    }
    let bn = p.bn.as_ref().unwrap();
    let expected = Image::from_fn(5, 5, 3, |y, xx, c| {
        bn.gamma[c] * (z.get(y, xx, c) - bn.running_mean[c]) / (bn.running_var[c] + 1e-5).sqrt() + bn.beta[c]
    });
    let out = net.infer(&x).unwrap();
    for (a, b) in out.as_slice().iter().zip(expected.as_slice()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn single_conv_matches_naive() {
    let net = randomized(EmbedShape { in_channels: 3, out_channels: 4, batch_norm: false }, 2);
    let x = random_image(1, 5, 5, 3);
    let l = &net.params().layers[0];
    let ours = l.forward(&x).unwrap();
    let oracle = naive_conv(&x, &l.weight, &l.bias, l.out_channels);
    for (a, b) in ours.as_slice().iter().zip(oracle.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn leaky_slope_on_negative_inputs() {
    assert_eq!(LEAKY_SLOPE, 0.2);
    // single channel network whose first two layers pass the centre tap only
    let mut params =
        EmbedNetParams::init(EmbedShape { in_channels: 1, out_channels: 1, batch_norm: false }, 0).unwrap();
    for l in &mut params.layers {
        l.weight.iter_mut().for_each(|w| *w = 0.0);
        l.weight[4] = 1.0;
    }
    let net = EmbedNet::new(params);
    let x = Image::from_vec(1, 2, 1, vec![-1.0, 3.0]).unwrap();
    let out = net.infer(&x).unwrap();
    assert!((out.get(0, 0, 0) + 0.04).abs() < 1e-15);
    assert_eq!(out.get(0, 1, 0), 3.0);
}

fn check_gradients(shape: EmbedShape, seed: u64) {
    let net = randomized(shape, seed);
    let x = random_image(seed + 1, 8, 8, shape.in_channels);
    let r = random_image(seed + 2, 8, 8, shape.out_channels);
    let loss_of = |net: &EmbedNet, x: &Image| -> f64 {
        let (out, _) = net.forward_train(x).unwrap();
        out.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = net.forward_train(&x).unwrap();
    let (g_params, g_input) = net.backward(&cache, &r).unwrap();

    let theta = net.params().flatten();
    let numeric = central_difference(
        |t| {
            let mut probe = net.clone();
            probe.params_mut().assign(t).unwrap();
            loss_of(&probe, &x)
        },
        &theta,
        1e-5,
    );
    let err = max_relative_error(&g_params, &numeric);
    assert!(err <= 1e-3, "parameter gradient error {err}");

    let numeric_x = central_difference(
        |v| loss_of(&net, &Image::from_vec(8, 8, shape.in_channels, v.to_vec()).unwrap()),
        x.as_slice(),
        1e-5,
    );
    let err = max_relative_error(g_input.as_slice(), &numeric_x);
    assert!(err <= 1e-3, "input gradient error {err}");
}

#[test]
fn gradients_match_finite_differences_with_batch_norm() {
    check_gradients(EmbedShape { in_channels: 1, out_channels: 2, batch_norm: true }, 11);
}

#[test]
fn gradients_match_finite_differences_without_batch_norm() {
    check_gradients(EmbedShape { in_channels: 3, out_channels: 2, batch_norm: false }, 12);
}

#[test]
fn repeated_forward_is_bitwise_identical() {
    let net = randomized(EmbedShape { in_channels: 1, out_channels: 3, batch_norm: true }, 3);
    let x = random_image(5, 16, 16, 1);
    let (a, _) = net.forward_train(&x).unwrap();
    let (b, _) = net.forward_train(&x).unwrap();
    assert_eq!(a, b);
    assert_eq!(net.infer(&x).unwrap(), net.infer(&x).unwrap());
}

#[test]
fn eval_mode_uses_running_statistics() {
    let mut net = randomized(EmbedShape { in_channels: 1, out_channels: 2, batch_norm: true }, 8);
    let x = random_image(2, 6, 6, 1);
    let before = net.infer(&x).unwrap();
    let (_, cache) = net.forward(&x, Mode::Eval).unwrap();
    assert!(cache.is_none());
    assert_eq!(net.infer(&x).unwrap(), before);
    net.forward(&x, Mode::Train).unwrap();
    assert_ne!(net.infer(&x).unwrap(), before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn train_mode_normalizes_each_channel(seed in 0u64..1000, h in 4usize..10, w in 4usize..10) {
        let net = EmbedNet::init(EmbedShape { in_channels: 1, out_channels: 3, batch_norm: true }, seed).unwrap();
        let x = random_image(seed ^ 0xabc, h, w, 1).map(|v| 4.0 * v);
        let (_, cache) = net.forward_train(&x).unwrap();
        let xhat = cache.normalized().unwrap();
        let n = (h * w) as f64;
        for c in 0..3 {
            prop_assume!(cache.batch_var()[c] > 0.1);
            let vals: Vec<f64> = (0..h * w).map(|i| xhat.as_slice()[i * 3 + c]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((var - 1.0).abs() <= 1e-4);
        }
    }
}
