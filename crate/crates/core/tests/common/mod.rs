//! Reference implementations the optimized code is checked against. Kept
//! deliberately naive: explicit loops, no shared code with the library.

#![allow(dead_code)]

pub mod gradients;
pub mod ingest_fixture;
pub mod oracle_checks;
pub mod sim_checks;

use num_rational::Ratio;
use rand::Rng;
use traffic_density::tensor::{ConvSpec, Padding, PoolSpec, PoolStatistic, Tensor};

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values in `±[0.05, 1]` so no element sits near a ReLU kink.
pub fn away_from_zero<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced at least `gap` apart, randomly permuted, so every
/// pooling window has a clear winner.
pub fn well_separated<R: Rng>(rng: &mut R, shape: &[usize], gap: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * gap - 0.5 * n as f64 * gap).collect();
    for i in (1..n).rev() {
        values.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), values).unwrap()
}

pub fn naive_conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Tensor {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw) = (spec.kernel_height, spec.kernel_width);
    let (pt, pl, hp, wp) = match spec.padding {
        Padding::Valid => (0, 0, h, w),
        Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h + kh - 1, w + kw - 1),
    };
    let oh = (hp - kh) / spec.stride + 1;
    let ow = (wp - kw) / spec.stride + 1;
    let at = |c: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            input.get(&[c, y as usize, x as usize])
        }
    };
    let mut out = Tensor::zeros(&[spec.out_channels, oh, ow]);
    for o in 0..spec.out_channels {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias.get(&[o]);
                for c in 0..c_in {
                    for u in 0..kh {
                        for v in 0..kw {
                            let y = (i * spec.stride + u) as isize - pt as isize;
                            let x = (j * spec.stride + v) as isize - pl as isize;
                            acc += at(c, y, x) * kernels.get(&[o, c, u, v]);
                        }
                    }
                }
                out.set(&[o, i, j], acc);
            }
        }
    }
    out
}

/// Window statistic by direct scan; for max also the flat index of the first
/// maximal element in row-major order.
pub fn naive_pool(input: &Tensor, spec: &PoolSpec) -> (Tensor, Vec<usize>) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oh = (h - spec.window) / spec.stride + 1;
    let ow = (w - spec.window) / spec.stride + 1;
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut winners = Vec::new();
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut cells = Vec::new();
                for y in i * spec.stride..i * spec.stride + spec.window {
                    for x in j * spec.stride..j * spec.stride + spec.window {
                        cells.push(((ch * h + y) * w + x, input.get(&[ch, y, x])));
                    }
                }
                let value = match spec.statistic {
                    PoolStatistic::Max => {
                        let best = cells.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
                        winners.push(cells.iter().find(|c| c.1 == best).unwrap().0);
                        best
                    }
                    PoolStatistic::Average => {
                        let mut acc = 0.0;
                        for cell in &cells {
                            acc += cell.1;
                        }
                        acc * (1.0 / cells.len() as f64)
                    }
                };
                out.set(&[ch, i, j], value);
            }
        }
    }
    (out, winners)
}

/// Central differences of `f` at `x` with step `h`.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error, with the denominator floored so
/// gradients that are zero on both sides do not blow up.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6)).fold(0.0, f64::max)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`.
pub fn norm_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Metrics recomputed from scratch with exact rational counts.
#[derive(Debug)]
pub struct OracleMetrics {
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: Ratio<u64>,
    pub top2: Ratio<u64>,
    pub precision: Vec<Ratio<u64>>,
    pub recall: Vec<Ratio<u64>>,
    pub f1: Vec<Ratio<u64>>,
    pub present: Vec<bool>,
}

#[allow(clippy::needless_range_loop)]
pub fn oracle_metrics(predictions: &[Vec<f64>], truths: &[usize]) -> OracleMetrics {
    let k = predictions[0].len();
    let n = truths.len() as u64;
    let mut confusion = vec![vec![0u64; k]; k];
    let mut top1 = 0;
    let mut top2 = 0;
    for (p, &t) in predictions.iter().zip(truths) {
        // rank of class j: how many classes beat it, lower index winning ties
        let rank = |j: usize| (0..k).filter(|&i| p[i] > p[j] || (p[i] == p[j] && i < j)).count();
        let predicted = (0..k).find(|&j| rank(j) == 0).unwrap();
        confusion[t][predicted] += 1;
        if rank(t) == 0 {
            top1 += 1;
        }
        if rank(t) < 2 {
            top2 += 1;
        }
    }
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    let mut f1 = Vec::new();
    let mut present = Vec::new();
    for c in 0..k {
        let tp = confusion[c][c];
        let col: u64 = (0..k).map(|r| confusion[r][c]).sum();
        let row: u64 = confusion[c].iter().sum();
        let p = if col == 0 { Ratio::from_integer(0) } else { Ratio::new(tp, col) };
        let r = if row == 0 { Ratio::from_integer(0) } else { Ratio::new(tp, row) };
        f1.push(if p + r == Ratio::from_integer(0) {
            Ratio::from_integer(0)
        } else {
            Ratio::from_integer(2) * p * r / (p + r)
        });
        precision.push(p);
        recall.push(r);
        present.push(row > 0);
    }
    OracleMetrics {
        confusion,
        accuracy: Ratio::new(top1, n),
        top2: Ratio::new(top2, n),
        precision,
        recall,
        f1,
        present,
    }
}

/// Nearest `f64` to a rational with small numerator and denominator.
pub fn to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}
