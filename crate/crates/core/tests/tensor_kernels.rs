mod common;

use common::oracle_checks::{self, random_conv_case};
use common::{naive_conv2d, naive_pool, random_tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_density::data::translate;
use traffic_density::nn::{softmax_backward, weighted_cross_entropy, weighted_cross_entropy_grad_probs, ClassWeights};
use traffic_density::tensor::{
    conv2d_backward, conv2d_forward, dense_forward, maxpool2d, maxpool2d_backward, relu, softmax, ConvSpec, Padding,
    PoolSpec, Tensor,
};

#[test]
fn conv_matches_naive_loops_on_random_cases() {
    oracle_checks::conv_cases(5, 200);
}

#[test]
fn pooling_matches_window_scan_on_random_cases() {
    oracle_checks::pool_cases(6, 200);
}

#[test]
fn pool_oracle_on_random_six_by_six() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor(&mut rng, &[1, 6, 6]);
    let (fast, _) = maxpool2d(&x, &PoolSpec::max(2, 2)).unwrap();
    assert_eq!(fast, naive_pool(&x, &PoolSpec::max(2, 2)).0);
}

#[test]
fn five_by_five_with_three_by_three_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(&mut rng, &[1, 5, 5]);
    let k = random_tensor(&mut rng, &[1, 1, 3, 3]);
    let b = Tensor::zeros(&[1]);
    let spec = ConvSpec::new(1, 1, 3);
    let out = conv2d_forward(&x, &k, &b, &spec).unwrap();
    assert_eq!(out.shape(), &[1, 3, 3]);
    assert!(out.max_abs_diff(&naive_conv2d(&x, &k, &b, &spec)) < 1e-12);
}

#[test]
fn maxpool_backward_routes_one_per_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_tensor(&mut rng, &[2, 6, 6]);
    let spec = PoolSpec::max(2, 2);
    let (y, map) = maxpool2d(&x, &spec).unwrap();
    let g = maxpool2d_backward(&Tensor::filled(y.shape(), 1.0), &map, x.shape()).unwrap();
    assert_eq!(g.sum(), y.len() as f64);
    for ch in 0..2 {
        for wy in 0..3 {
            for wx in 0..3 {
                let mut ones = 0;
                for y in 2 * wy..2 * wy + 2 {
                    for x in 2 * wx..2 * wx + 2 {
                        ones += (g.get(&[ch, y, x]) == 1.0) as usize;
                    }
                }
                assert_eq!(ones, 1);
            }
        }
    }
    let zero = maxpool2d_backward(&Tensor::zeros(y.shape()), &map, x.shape()).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_backward_of_zero_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (x, k, b, spec) = random_conv_case(&mut rng);
    let y = conv2d_forward(&x, &k, &b, &spec).unwrap();
    let g = conv2d_backward(&Tensor::zeros(y.shape()), &x, &k, &spec).unwrap();
    assert!(g.input.data().iter().chain(g.kernels.data()).chain(g.bias.data()).all(|&v| v == 0.0));
}

#[test]
fn convolution_is_translation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let c = rng.random_range(1..=3);
        let (h, w) = (rng.random_range(4..=8), rng.random_range(6..=10));
        // small integers keep every sum exact, so equality is bitwise
        let x = Tensor::from_fn(&[c, h, w], |_| rng.random_range(-3..=3) as f64);
        let spec = ConvSpec::new(c, 2, 3);
        let k = Tensor::from_fn(&spec.kernel_shape(), |_| rng.random_range(-2..=2) as f64);
        let b = Tensor::zeros(&[2]);
        let delta = rng.random_range(1..=2);
        let shifted = translate(&x, 0, delta as isize);
        let a = conv2d_forward(&shifted, &k, &b, &spec).unwrap();
        let base = conv2d_forward(&x, &k, &b, &spec).unwrap();
        let (oh, ow) = (a.shape()[1], a.shape()[2]);
        for o in 0..2 {
            for i in 0..oh {
                for j in delta..ow {
                    assert_eq!(a.get(&[o, i, j]), base.get(&[o, i, j - delta]));
                }
            }
        }
    }
}

#[test]
fn output_ignores_pixels_outside_receptive_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let spec = ConvSpec::new(2, 3, 3);
    let x = random_tensor(&mut rng, &[2, 7, 7]);
    let k = random_tensor(&mut rng, &spec.kernel_shape());
    let b = random_tensor(&mut rng, &[3]);
    let base = conv2d_forward(&x, &k, &b, &spec).unwrap();
    let (i, j) = (2, 1);
    for c in 0..2 {
        for y in 0..7 {
            for xx in 0..7 {
                let inside = (i..i + 3).contains(&y) && (j..j + 3).contains(&xx);
                let mut p = x.clone();
                p.set(&[c, y, xx], x.get(&[c, y, xx]) + 10.0);
                let out = conv2d_forward(&p, &k, &b, &spec).unwrap();
                for o in 0..3 {
                    if inside {
                        assert_ne!(out.get(&[o, i, j]), base.get(&[o, i, j]));
                    } else {
                        assert_eq!(out.get(&[o, i, j]), base.get(&[o, i, j]));
                    }
                }
            }
        }
    }
}

#[test]
fn conv_parameter_count_ignores_image_size() {
    let spec = ConvSpec::new(3, 16, 3).with_padding(Padding::Same);
    assert_eq!(spec.parameter_count(), 16 * 3 * 9 + 16);
    for size in [8, 32, 128] {
        assert!(spec.output_shape(size, size).is_ok());
        assert_eq!(spec.parameter_count(), 448);
    }
}

#[test]
fn max_pool_tolerates_one_pixel_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let (h, w) = (6, 8);
        let mut x = Tensor::from_fn(&[1, h, w], |_| rng.random_range(0.0..0.4));
        // each window's maximum sits in its left column, so a shift one pixel
        // right keeps it inside the same window
        for wy in 0..h / 2 {
            for wx in 0..w / 2 {
                let y = 2 * wy + rng.random_range(0..2);
                x.set(&[0, y, 2 * wx], rng.random_range(0.5..1.0));
            }
        }
        let spec = PoolSpec::max(2, 2);
        let before = maxpool2d(&x, &spec).unwrap().0;
        let after = maxpool2d(&translate(&x, 0, 1), &spec).unwrap().0;
        assert_eq!(before, after);
    }
}

#[test]
fn fused_and_composed_cross_entropy_gradients_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let weights = ClassWeights::uniform(5);
    for _ in 0..50 {
        let logits = random_tensor(&mut rng, &[5]);
        let probs = softmax(&logits).unwrap();
        let class = rng.random_range(0..5);
        let (_, fused) = weighted_cross_entropy(&probs, class, &weights).unwrap();
        let dprobs = weighted_cross_entropy_grad_probs(&probs, class, &weights).unwrap();
        let composed = softmax_backward(&dprobs, &probs).unwrap();
        assert!(fused.max_abs_diff(&composed) < 1e-12);
    }
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let spec = ConvSpec::new(2, 1, 3);
    let err = conv2d_forward(&Tensor::zeros(&[3, 5, 5]), &Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[1]), &spec)
        .unwrap_err()
        .to_string();
    assert!(err.contains("[3, 5, 5]") && err.contains('2'), "{err}");
    let err =
        dense_forward(&Tensor::zeros(&[4]), &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).unwrap_err().to_string();
    assert!(err.contains("[4]") && err.contains("[3]"), "{err}");
}

#[test]
fn non_finite_inputs_rejected() {
    let mut x = Tensor::zeros(&[1, 4, 4]);
    x.set(&[0, 1, 1], f64::NAN);
    assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 1, 3, 3]), &Tensor::zeros(&[1]), &ConvSpec::new(1, 1, 3)).is_err());
    assert!(maxpool2d(&x, &PoolSpec::max(2, 2)).is_err());
    assert!(relu(&x).is_err());
    assert!(softmax(&Tensor::vector(&[f64::INFINITY, 0.0])).is_err());
}

proptest! {
    #[test]
    fn conv_oracle_property(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, k, b, spec) = random_conv_case(&mut rng);
        let fast = conv2d_forward(&x, &k, &b, &spec).unwrap();
        prop_assert!(fast.max_abs_diff(&naive_conv2d(&x, &k, &b, &spec)) < 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(values in prop::collection::vec(-500.0f64..500.0, 1..12)) {
        let p = softmax(&Tensor::vector(&values)).unwrap();
        prop_assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relu_is_idempotent_and_nonnegative(values in prop::collection::vec(-10.0f64..10.0, 1..32)) {
        let once = relu(&Tensor::vector(&values)).unwrap();
        prop_assert!(once.data().iter().all(|&v| v >= 0.0));
        prop_assert_eq!(relu(&once).unwrap(), once);
    }

    #[test]
    fn conv_is_linear_in_input(seed in any::<u64>(), scale in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, k, _, spec) = random_conv_case(&mut rng);
        let zero = Tensor::zeros(&[spec.out_channels]);
        let scaled = Tensor::from_fn(x.shape(), |i| x.data()[i] * scale);
        let a = conv2d_forward(&scaled, &k, &zero, &spec).unwrap();
        let b = conv2d_forward(&x, &k, &zero, &spec).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - scale * v).abs() < 1e-9);
        }
    }
}
