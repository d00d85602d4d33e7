use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolStatistic {
    Max,
    Average,
}

/// Square pooling window applied per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub statistic: PoolStatistic,
}

impl PoolSpec {
    pub fn max(window: usize, stride: usize) -> Self {
        PoolSpec { window, stride, statistic: PoolStatistic::Max }
    }

    pub fn average(window: usize, stride: usize) -> Self {
        PoolSpec { window, stride, statistic: PoolStatistic::Average }
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<[usize; 3]> {
        let [c, h, w] = match input_shape {
            &[c, h, w] => [c, h, w],
            other => return Err(Error::shape("pool input (channels, height, width)", &[0, 0, 0], other)),
        };
        if self.window == 0 || self.stride == 0 {
            return Err(Error::invalid("pool window and stride must be positive"));
        }
        if self.window > h || self.window > w {
            return Err(Error::invalid(format!("pool window {} larger than input {h}x{w}", self.window)));
        }
        Ok([c, (h - self.window) / self.stride + 1, (w - self.window) / self.stride + 1])
    }
}

/// For every pooled cell, the flat input offset of the value that won the
/// window. Consumed by [`maxpool2d_backward`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxMap {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Unchecked max pooling on a raw `[C, H, W]` slice. `indices` receives the
/// flat input offset of every window's winner.
pub(crate) fn maxpool2d_raw(
    input: &[f64],
    [c, h, w]: [usize; 3],
    [oh, ow]: [usize; 2],
    spec: &PoolSpec,
    out: &mut [f64],
    indices: &mut [usize],
) {
    let mut k = 0;
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let (y0, x0) = (i * spec.stride, j * spec.stride);
                let mut best = base + y0 * w + x0;
                let mut best_value = input[best];
                for y in y0..y0 + spec.window {
                    let row = base + y * w;
                    for x in x0..x0 + spec.window {
                        let v = input[row + x];
                        let better = v > best_value;
                        best = if better { row + x } else { best };
                        best_value = if better { v } else { best_value };
                    }
                }
                out[k] = best_value;
                indices[k] = best;
                k += 1;
            }
        }
    }
}

/// Max pooling. Ties resolve to the first position in row-major scan order
/// of the window, which keeps the backward pass deterministic.
pub fn maxpool2d(input: &Tensor, spec: &PoolSpec) -> Result<(Tensor, ArgmaxMap)> {
    let [c, oh, ow] = spec.output_shape(input.shape())?;
    input.ensure_finite("maxpool2d input")?;
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let mut out = vec![0.0; c * oh * ow];
    let mut indices = vec![0; c * oh * ow];
    maxpool2d_raw(input.data(), [c, h, w], [oh, ow], spec, &mut out, &mut indices);
    let output_shape = vec![c, oh, ow];
    Ok((
        Tensor::new(output_shape.clone(), out)?,
        ArgmaxMap { input_shape: input.shape().to_vec(), output_shape, indices },
    ))
}

/// Routes each upstream value to the input position that won its window.
/// Overlapping windows that share a winner accumulate.
pub fn maxpool2d_backward(grad_out: &Tensor, argmax: &ArgmaxMap, input_shape: &[usize]) -> Result<Tensor> {
    if argmax.input_shape != input_shape {
        return Err(Error::shape("maxpool2d argmax map input", &argmax.input_shape, input_shape));
    }
    grad_out.ensure_shape("maxpool2d grad_out", &argmax.output_shape)?;
    grad_out.ensure_finite("maxpool2d grad_out")?;
    let mut grad = Tensor::zeros(input_shape);
    if let Some(&bad) = argmax.indices.iter().find(|&&i| i >= grad.len()) {
        return Err(Error::invalid(format!("argmax index {bad} outside input")));
    }
    maxpool2d_backward_raw(grad_out.data(), &argmax.indices, grad.data_mut());
    Ok(grad)
}

/// Unchecked scatter of `grad_out` into a zeroed `grad_input`.
pub(crate) fn maxpool2d_backward_raw(grad_out: &[f64], indices: &[usize], grad_input: &mut [f64]) {
    for (&idx, &g) in indices.iter().zip(grad_out) {
        grad_input[idx] += g;
    }
}

pub fn avgpool2d(input: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    let [c, oh, ow] = spec.output_shape(input.shape())?;
    input.ensure_finite("avgpool2d input")?;
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let data = input.data();
    let norm = 1.0 / (spec.window * spec.window) as f64;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let (y0, x0) = (i * spec.stride, j * spec.stride);
                let mut acc = 0.0;
                for y in y0..y0 + spec.window {
                    for x in x0..x0 + spec.window {
                        acc += data[base + y * w + x];
                    }
                }
                out.push(acc * norm);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn avgpool2d_backward(grad_out: &Tensor, input_shape: &[usize], spec: &PoolSpec) -> Result<Tensor> {
    let out_shape = spec.output_shape(input_shape)?;
    grad_out.ensure_shape("avgpool2d grad_out", &out_shape)?;
    grad_out.ensure_finite("avgpool2d grad_out")?;
    let [c, oh, ow] = out_shape;
    let (h, w) = (input_shape[1], input_shape[2]);
    let norm = 1.0 / (spec.window * spec.window) as f64;
    let mut grad = Tensor::zeros(input_shape);
    let dst = grad.data_mut();
    let up = grad_out.data();
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let g = up[(ch * oh + i) * ow + j] * norm;
                for y in i * spec.stride..i * spec.stride + spec.window {
                    for x in j * spec.stride..j * spec.stride + spec.window {
                        dst[base + y * w + x] += g;
                    }
                }
            }
        }
    }
    Ok(grad)
}
