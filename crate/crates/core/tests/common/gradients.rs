//! Finite-difference checks for every layer kernel and for whole models.
//! Each check returns `(name, error, tolerance)` so callers can assert or
//! report.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_density::data::Example;
use traffic_density::nn::{
    batch_gradient, compute_class_weights, init_parameters, weighted_cross_entropy, ClassWeights, Layer, ModelConfig,
};
use traffic_density::tensor::{
    avgpool2d, avgpool2d_backward, conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2d,
    maxpool2d_backward, relu, relu_backward, softmax, ConvSpec, Padding, PoolSpec, Tensor,
};

use super::{
    away_from_zero, dot, finite_difference, max_relative_error, norm_relative_error, random_tensor, well_separated,
};

pub const LAYER_STEP: f64 = 1e-3;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

pub type Check = (String, f64, f64);

fn with(t: &Tensor, values: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), values.to_vec()).unwrap()
}

pub fn conv_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut out = Vec::new();
    let cases = [
        (2, 3, 6, 7, 3, 1, Padding::Valid),
        (3, 2, 5, 5, 3, 1, Padding::Same),
        (1, 4, 8, 8, 3, 2, Padding::Same),
        (4, 2, 7, 6, 2, 2, Padding::Valid),
        (2, 2, 6, 6, 2, 1, Padding::Same),
    ];
    for (c_in, c_out, h, w, k, stride, padding) in cases {
        let spec = ConvSpec::new(c_in, c_out, k).with_stride(stride).with_padding(padding);
        let x = random_tensor(rng, &[c_in, h, w]);
        let kernels = random_tensor(rng, &spec.kernel_shape());
        let bias = random_tensor(rng, &[c_out]);
        let y = conv2d_forward(&x, &kernels, &bias, &spec).unwrap();
        let r = random_tensor(rng, y.shape());
        let grads = conv2d_backward(&r, &x, &kernels, &spec).unwrap();
        let label = format!("conv {c_in}->{c_out} {h}x{w} k{k} s{stride} {padding:?}");

        let num = finite_difference(x.data(), LAYER_STEP, |v| {
            dot(r.data(), conv2d_forward(&with(&x, v), &kernels, &bias, &spec).unwrap().data())
        });
        out.push((format!("{label} input"), max_relative_error(grads.input.data(), &num), LAYER_TOLERANCE));
        let num = finite_difference(kernels.data(), LAYER_STEP, |v| {
            dot(r.data(), conv2d_forward(&x, &with(&kernels, v), &bias, &spec).unwrap().data())
        });
        out.push((format!("{label} kernels"), max_relative_error(grads.kernels.data(), &num), LAYER_TOLERANCE));
        let num = finite_difference(bias.data(), LAYER_STEP, |v| {
            dot(r.data(), conv2d_forward(&x, &kernels, &with(&bias, v), &spec).unwrap().data())
        });
        out.push((format!("{label} bias"), max_relative_error(grads.bias.data(), &num), LAYER_TOLERANCE));
    }
    out
}

pub fn pool_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut out = Vec::new();
    for (c, h, w, window, stride) in [(2, 6, 6, 2, 2), (3, 7, 7, 3, 2), (1, 8, 5, 2, 1), (4, 4, 4, 2, 2)] {
        let spec = PoolSpec::max(window, stride);
        // values 0.01 apart: a ±1e-3 step never changes a window's winner
        let x = well_separated(rng, &[c, h, w], 0.01);
        let (y, map) = maxpool2d(&x, &spec).unwrap();
        let r = random_tensor(rng, y.shape());
        let g = maxpool2d_backward(&r, &map, x.shape()).unwrap();
        let num = finite_difference(x.data(), LAYER_STEP, |v| {
            dot(r.data(), maxpool2d(&with(&x, v), &spec).unwrap().0.data())
        });
        out.push((
            format!("maxpool {c}x{h}x{w} w{window} s{stride}"),
            max_relative_error(g.data(), &num),
            LAYER_TOLERANCE,
        ));

        let spec = PoolSpec::average(window, stride);
        let x = random_tensor(rng, &[c, h, w]);
        let y = avgpool2d(&x, &spec).unwrap();
        let r = random_tensor(rng, y.shape());
        let g = avgpool2d_backward(&r, x.shape(), &spec).unwrap();
        let num =
            finite_difference(x.data(), LAYER_STEP, |v| dot(r.data(), avgpool2d(&with(&x, v), &spec).unwrap().data()));
        out.push((
            format!("avgpool {c}x{h}x{w} w{window} s{stride}"),
            max_relative_error(g.data(), &num),
            LAYER_TOLERANCE,
        ));
    }
    out
}

pub fn dense_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut out = Vec::new();
    for (m, n) in [(1, 1), (3, 5), (8, 4), (5, 16)] {
        let x = random_tensor(rng, &[n]);
        let wt = random_tensor(rng, &[m, n]);
        let b = random_tensor(rng, &[m]);
        let r = random_tensor(rng, &[m]);
        let g = dense_backward(&r, &x, &wt).unwrap();
        let num = finite_difference(x.data(), LAYER_STEP, |v| {
            dot(r.data(), dense_forward(&with(&x, v), &wt, &b).unwrap().data())
        });
        out.push((format!("dense {n}->{m} input"), max_relative_error(g.input.data(), &num), LAYER_TOLERANCE));
        let num = finite_difference(wt.data(), LAYER_STEP, |v| {
            dot(r.data(), dense_forward(&x, &with(&wt, v), &b).unwrap().data())
        });
        out.push((format!("dense {n}->{m} weights"), max_relative_error(g.weights.data(), &num), LAYER_TOLERANCE));
        let num = finite_difference(b.data(), LAYER_STEP, |v| {
            dot(r.data(), dense_forward(&x, &wt, &with(&b, v)).unwrap().data())
        });
        out.push((format!("dense {n}->{m} bias"), max_relative_error(g.bias.data(), &num), LAYER_TOLERANCE));
    }
    out
}

pub fn activation_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut out = Vec::new();
    let x = away_from_zero(rng, &[3, 4, 4]);
    let r = random_tensor(rng, x.shape());
    let g = relu_backward(&r, &x).unwrap();
    let num = finite_difference(x.data(), LAYER_STEP, |v| dot(r.data(), relu(&with(&x, v)).unwrap().data()));
    out.push(("relu".to_string(), max_relative_error(g.data(), &num), LAYER_TOLERANCE));

    let weights = compute_class_weights(&[1679, 1306, 556, 554, 488]).unwrap();
    for trial in 0..4 {
        let logits = random_tensor(rng, &[5]).data().iter().map(|v| 3.0 * v).collect::<Vec<_>>();
        let logits = Tensor::vector(&logits);
        let class = trial % 5;
        let (_, g) = weighted_cross_entropy(&softmax(&logits).unwrap(), class, &weights).unwrap();
        let num = finite_difference(logits.data(), LAYER_STEP, |v| {
            weighted_cross_entropy(&softmax(&Tensor::vector(v)).unwrap(), class, &weights).unwrap().0
        });
        out.push((
            format!("softmax + weighted CE, class {class}"),
            max_relative_error(g.data(), &num),
            LAYER_TOLERANCE,
        ));
    }
    out
}

/// Whole-model gradient against central differences on at most
/// `max_coords` randomly chosen parameters.
fn model_check(
    name: &str,
    config: &ModelConfig,
    weights: &ClassWeights,
    batch: usize,
    max_coords: usize,
    rng: &mut ChaCha8Rng,
) -> Check {
    let mut params = init_parameters(config, rng.random()).unwrap();
    // nonzero biases so ReLUs are not all exactly at their kink
    for p in params.layers.iter_mut().flatten() {
        p.bias = Tensor::from_fn(p.bias.shape(), |_| rng.random_range(-0.1..0.1));
    }
    let [c, h, w] = config.input_shape;
    let examples: Vec<Example> = (0..batch)
        .map(|_| Example {
            image: Tensor::from_fn(&[c, h, w], |_| rng.random_range(0.0..1.0)),
            label: rng.random_range(0..config.class_count),
        })
        .collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let (_, grads) = batch_gradient(config, &params, &refs, weights).unwrap();
    let flat = params.flatten();
    let all = grads.flatten();
    let coords: Vec<usize> = if flat.len() > max_coords {
        let mut picked = sample(rng, flat.len(), max_coords).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..flat.len()).collect()
    };
    let mut probe = params.clone();
    let mut loss_at = |i: usize, v: f64| {
        let mut moved = flat.clone();
        moved[i] = v;
        probe.assign_flat(&moved);
        batch_gradient(config, &probe, &refs, weights).unwrap().0
    };
    let a: Vec<f64> = coords.iter().map(|&i| all[i]).collect();
    let mut num: Vec<f64> =
        coords.iter().map(|&i| (loss_at(i, flat[i] + 1e-5) - loss_at(i, flat[i] - 1e-5)) / 2e-5).collect();
    // A step that straddles a ReLU or max-pool kink measures a secant, not
    // the derivative. Coordinates that disagree are re-probed with a step
    // 100x smaller; only a handful may need it.
    let mut reprobed = 0;
    for (k, &i) in coords.iter().enumerate() {
        if max_relative_error(&a[k..=k], &num[k..=k]) > MODEL_TOLERANCE {
            reprobed += 1;
            num[k] = (loss_at(i, flat[i] + 1e-7) - loss_at(i, flat[i] - 1e-7)) / 2e-7;
        }
    }
    let name = format!("{name}, {} of {} parameters", coords.len(), flat.len());
    if reprobed * 200 > a.len() {
        return (format!("{name} ({reprobed} kinked coordinates)"), f64::INFINITY, MODEL_TOLERANCE);
    }
    (name, norm_relative_error(&a, &num), MODEL_TOLERANCE)
}

pub fn model_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let table = compute_class_weights(&[1679, 1306, 556, 554, 488]).unwrap();
    let small = ModelConfig {
        input_shape: [2, 9, 9],
        layers: vec![
            Layer::Conv(ConvSpec::new(2, 3, 3).with_stride(2)),
            Layer::Relu,
            Layer::Pool(PoolSpec::average(2, 1)),
            Layer::Conv(ConvSpec::new(3, 4, 2).with_padding(Padding::Same)),
            Layer::Relu,
            Layer::Pool(PoolSpec::max(2, 1)),
            Layer::Flatten,
            Layer::Dense { units: 6 },
            Layer::Relu,
            Layer::Dense { units: 5 },
            Layer::Softmax,
        ],
        class_count: 5,
    };
    vec![
        model_check(
            "basic CNN 1x8x8, one example, weighted",
            &ModelConfig::basic_cnn(1, 8, 8, 5),
            &table,
            1,
            2000,
            rng,
        ),
        model_check("mixed-layer model, batch of 3", &small, &ClassWeights::uniform(5), 3, usize::MAX, rng),
    ]
}

/// Every check above, deterministic in `seed`.
pub fn full_suite(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = conv_checks(&mut rng);
    all.extend(pool_checks(&mut rng));
    all.extend(dense_checks(&mut rng));
    all.extend(activation_checks(&mut rng));
    all.extend(model_checks(&mut rng));
    all
}
