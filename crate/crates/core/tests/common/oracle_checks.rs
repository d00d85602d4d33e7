//! Loops that compare library kernels and metrics against the naive
//! references in this directory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_density::metrics::evaluate;
use traffic_density::tensor::{avgpool2d, conv2d_forward, maxpool2d, ConvSpec, Padding, PoolSpec, Tensor};

use super::{naive_conv2d, naive_pool, oracle_metrics, random_tensor, to_f64};

pub fn random_conv_case(rng: &mut ChaCha8Rng) -> (Tensor, Tensor, Tensor, ConvSpec) {
    let c_in = rng.random_range(1..=4);
    let c_out = rng.random_range(1..=4);
    let h = rng.random_range(3..=9);
    let w = rng.random_range(3..=9);
    let k = rng.random_range(1..=3.min(h).min(w));
    let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
    let spec = ConvSpec::new(c_in, c_out, k).with_stride(rng.random_range(1..=2)).with_padding(padding);
    let x = random_tensor(rng, &[c_in, h, w]);
    let kernels = random_tensor(rng, &spec.kernel_shape());
    let bias = random_tensor(rng, &[c_out]);
    (x, kernels, bias, spec)
}

/// Convolution against explicit loops on `cases` random shapes.
pub fn conv_cases(seed: u64, cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let (x, k, b, spec) = random_conv_case(&mut rng);
        let fast = conv2d_forward(&x, &k, &b, &spec).unwrap();
        let slow = naive_conv2d(&x, &k, &b, &spec);
        assert_eq!(fast.shape(), slow.shape(), "{spec:?}");
        assert!(fast.max_abs_diff(&slow) < 1e-12, "{spec:?}");
    }
}

/// Max and average pooling against a window scan on `cases` random shapes.
pub fn pool_cases(seed: u64, cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let c = rng.random_range(1..=4);
        let h = rng.random_range(2..=9);
        let w = rng.random_range(2..=9);
        let window = rng.random_range(1..=h.min(w).min(3));
        let stride = rng.random_range(1..=2);
        // a coarse value grid produces plenty of ties
        let x = Tensor::from_fn(&[c, h, w], |_| rng.random_range(0..4) as f64);
        let spec = PoolSpec::max(window, stride);
        let (fast, map) = maxpool2d(&x, &spec).unwrap();
        let (slow, winners) = naive_pool(&x, &spec);
        assert_eq!(fast, slow, "case {case}");
        assert_eq!(map.indices, winners, "case {case}");

        let spec = PoolSpec::average(window, stride);
        let fast = avgpool2d(&x, &spec).unwrap();
        let (slow, _) = naive_pool(&x, &spec);
        assert!(fast.max_abs_diff(&slow) < 1e-12, "case {case}");
    }
}

/// Random prediction set; coarse integer weights make probability ties common.
pub fn random_set(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let k = rng.random_range(2..=6);
    let n = rng.random_range(1..=60);
    let preds = (0..n)
        .map(|_| {
            let w: Vec<f64> =
                (0..k).map(|_| rng.random_range(0..4) as f64 + 0.5 * rng.random_range(0..2) as f64).collect();
            let total: f64 = w.iter().sum();
            if total == 0.0 {
                vec![1.0 / k as f64; k]
            } else {
                w.iter().map(|v| v / total).collect()
            }
        })
        .collect();
    let truths = (0..n).map(|_| rng.random_range(0..k)).collect();
    (preds, truths)
}

pub fn assert_matches_oracle(preds: &[Vec<f64>], truths: &[usize]) {
    let report = evaluate(preds, truths).unwrap();
    let oracle = oracle_metrics(preds, truths);
    let k = preds[0].len();
    for t in 0..k {
        for p in 0..k {
            assert_eq!(report.confusion.get(t, p), oracle.confusion[t][p]);
        }
    }
    assert_eq!(report.accuracy, to_f64(oracle.accuracy));
    assert_eq!(report.top2_accuracy, to_f64(oracle.top2));
    let mut f1_sum = 0.0;
    let mut present = 0;
    for c in 0..k {
        assert_eq!(report.per_class[c].precision, to_f64(oracle.precision[c]), "precision {c}");
        assert_eq!(report.per_class[c].recall, to_f64(oracle.recall[c]), "recall {c}");
        assert_eq!(report.per_class[c].f1, to_f64(oracle.f1[c]), "f1 {c}");
        if oracle.present[c] {
            f1_sum += to_f64(oracle.f1[c]);
            present += 1;
        }
    }
    assert_eq!(report.macro_f1, f1_sum / present as f64);
}

/// `evaluate` against the brute-force metrics on `sets` random prediction sets.
pub fn metric_sets(seed: u64, sets: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..sets {
        let (preds, truths) = random_set(&mut rng);
        assert_matches_oracle(&preds, &truths);
    }
}
