use serde::{Deserialize, Serialize};

use super::gemm::{gemm, gemm_scaled, Mat};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding; the kernel only visits positions fully inside the input.
    Valid,
    /// Zero padding of `k - 1` per axis (top/left gets `(k - 1) / 2`), so a
    /// stride-1 convolution preserves the spatial extent.
    Same,
}

/// Geometry of a 2-D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_height: usize,
    pub kernel_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            kernel_height: kernel,
            kernel_width: kernel,
            in_channels,
            out_channels,
            stride: 1,
            padding: Padding::Valid,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_height, self.kernel_width]
    }

    /// Trainable values: one kernel per (out, in) channel pair plus one bias
    /// per output channel. Independent of the image size.
    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_height * self.kernel_width + self.out_channels
    }

    /// `(top, left)` zero padding.
    pub fn pad_before(&self) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => ((self.kernel_height - 1) / 2, (self.kernel_width - 1) / 2),
        }
    }

    fn padded_extent(&self, height: usize, width: usize) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (height, width),
            Padding::Same => (height + self.kernel_height - 1, width + self.kernel_width - 1),
        }
    }

    /// Output `(channels, height, width)` for an input of `(in_channels, height, width)`.
    pub fn output_shape(&self, height: usize, width: usize) -> Result<[usize; 3]> {
        self.validate()?;
        let (hp, wp) = self.padded_extent(height, width);
        if self.kernel_height > hp || self.kernel_width > wp {
            return Err(Error::invalid(format!(
                "kernel {}x{} larger than padded input {hp}x{wp}",
                self.kernel_height, self.kernel_width
            )));
        }
        Ok([self.out_channels, (hp - self.kernel_height) / self.stride + 1, (wp - self.kernel_width) / self.stride + 1])
    }

    fn validate(&self) -> Result<()> {
        if self.kernel_height == 0
            || self.kernel_width == 0
            || self.in_channels == 0
            || self.out_channels == 0
            || self.stride == 0
        {
            return Err(Error::invalid(format!("conv spec extents must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Gradients of a convolution with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub(crate) struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    /// Assumes `spec` and `input_shape` were already validated.
    pub(crate) fn new(input_shape: [usize; 3], spec: &ConvSpec) -> Result<Self> {
        let [channels, height, width] = input_shape;
        let [_, out_h, out_w] = spec.output_shape(height, width)?;
        let (pad_top, pad_left) = spec.pad_before();
        Ok(Geometry { channels, height, width, out_h, out_w, pad_top, pad_left })
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn geometry(input_shape: &[usize], kernels: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Geometry> {
    if input_shape.len() != 3 || input_shape[0] != spec.in_channels {
        return Err(Error::shape("conv2d input (channels, height, width)", &[spec.in_channels, 0, 0], input_shape));
    }
    kernels.ensure_shape("conv2d kernels", &spec.kernel_shape())?;
    bias.ensure_shape("conv2d bias", &[spec.out_channels])?;
    Geometry::new([input_shape[0], input_shape[1], input_shape[2]], spec)
}

/// Output columns `j0..j1` whose tap `v` lands inside the unpadded input.
fn valid_columns(g: &Geometry, s: usize, v: usize) -> (usize, usize) {
    let j0 = g.pad_left.saturating_sub(v).div_ceil(s);
    let limit = g.width + g.pad_left;
    let j1 = if limit > v { ((limit - v - 1) / s + 1).min(g.out_w) } else { 0 };
    (j0, j1.max(j0))
}

fn im2col(input: &[f64], g: &Geometry, spec: &ConvSpec, cols: &mut Vec<f64>) {
    let (kh, kw, s) = (spec.kernel_height, spec.kernel_width, spec.stride);
    let positions = g.positions();
    cols.clear();
    cols.resize(g.channels * kh * kw * positions, 0.0);
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for u in 0..kh {
            for v in 0..kw {
                let row = (c * kh + u) * kw + v;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for i in 0..g.out_h {
                    let y = (i * s + u) as isize - g.pad_top as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    let dst_row = &mut dst[i * g.out_w..(i + 1) * g.out_w];
                    let (j0, j1) = valid_columns(g, s, v);
                    if s == 1 {
                        let x0 = j0 + v - g.pad_left;
                        dst_row[j0..j1].copy_from_slice(&src_row[x0..x0 + (j1 - j0)]);
                    } else {
                        for j in j0..j1 {
                            dst_row[j] = src_row[j * s + v - g.pad_left];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, spec: &ConvSpec, out: &mut [f64]) {
    let (kh, kw, s) = (spec.kernel_height, spec.kernel_width, spec.stride);
    let positions = g.positions();
    out.fill(0.0);
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for u in 0..kh {
            for v in 0..kw {
                let row = (c * kh + u) * kw + v;
                let src = &cols[row * positions..(row + 1) * positions];
                for i in 0..g.out_h {
                    let y = (i * s + u) as isize - g.pad_top as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    let src_row = &src[i * g.out_w..(i + 1) * g.out_w];
                    let (j0, j1) = valid_columns(g, s, v);
                    for j in j0..j1 {
                        dst_row[j * s + v - g.pad_left] += src_row[j];
                    }
                }
            }
        }
    }
}

/// Unchecked forward pass on raw slices; `cols` is scratch space.
pub(crate) fn conv2d_forward_raw(
    input: &[f64],
    g: &Geometry,
    kernels: &[f64],
    bias: &[f64],
    spec: &ConvSpec,
    cols: &mut Vec<f64>,
    out: &mut [f64],
) {
    let positions = g.positions();
    let depth = spec.in_channels * spec.kernel_height * spec.kernel_width;
    for (row, &b) in out.chunks_exact_mut(positions).zip(bias) {
        row.fill(b);
    }
    im2col(input, g, spec, cols);
    gemm(Mat::new(kernels, spec.out_channels, depth), Mat::new(cols, depth, positions), 1.0, out);
}

/// Unchecked backward pass on raw slices. Kernel and bias gradients are
/// scaled by `scale` and added to the existing contents; the input gradient
/// is overwritten when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_raw(
    grad_out: &[f64],
    input: &[f64],
    g: &Geometry,
    kernels: &[f64],
    spec: &ConvSpec,
    scale: f64,
    grad_kernels: &mut [f64],
    grad_bias: &mut [f64],
    grad_input: Option<&mut [f64]>,
    cols: &mut Vec<f64>,
) {
    let positions = g.positions();
    let depth = spec.in_channels * spec.kernel_height * spec.kernel_width;
    for (gb, row) in grad_bias.iter_mut().zip(grad_out.chunks_exact(positions)) {
        *gb += scale * row.iter().sum::<f64>();
    }
    im2col(input, g, spec, cols);
    gemm_scaled(
        scale,
        Mat::new(grad_out, spec.out_channels, positions),
        Mat::new(cols, depth, positions).t(),
        1.0,
        grad_kernels,
    );
    if let Some(grad_input) = grad_input {
        gemm(
            Mat::new(kernels, spec.out_channels, depth).t(),
            Mat::new(grad_out, spec.out_channels, positions),
            0.0,
            cols,
        );
        col2im(cols, g, spec, grad_input);
    }
}

pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let g = geometry(input.shape(), kernels, bias, spec)?;
    input.ensure_finite("conv2d input")?;
    kernels.ensure_finite("conv2d kernels")?;
    bias.ensure_finite("conv2d bias")?;
    let mut out = vec![0.0; spec.out_channels * g.positions()];
    conv2d_forward_raw(input.data(), &g, kernels.data(), bias.data(), spec, &mut Vec::new(), &mut out);
    Tensor::new(vec![spec.out_channels, g.out_h, g.out_w], out)
}

/// Exact gradients of [`conv2d_forward`] given the upstream gradient.
pub fn conv2d_backward(grad_out: &Tensor, input: &Tensor, kernels: &Tensor, spec: &ConvSpec) -> Result<ConvGrads> {
    let bias_shape = Tensor::zeros(&[spec.out_channels]);
    let g = geometry(input.shape(), kernels, &bias_shape, spec)?;
    grad_out.ensure_shape("conv2d grad_out", &[spec.out_channels, g.out_h, g.out_w])?;
    grad_out.ensure_finite("conv2d grad_out")?;

    let mut grad_kernels = vec![0.0; kernels.len()];
    let mut grad_bias = vec![0.0; spec.out_channels];
    let mut grad_input = vec![0.0; input.len()];
    conv2d_backward_raw(
        grad_out.data(),
        input.data(),
        &g,
        kernels.data(),
        spec,
        1.0,
        &mut grad_kernels,
        &mut grad_bias,
        Some(&mut grad_input),
        &mut Vec::new(),
    );
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), grad_input)?,
        kernels: Tensor::new(spec.kernel_shape().to_vec(), grad_kernels)?,
        bias: Tensor::new(vec![spec.out_channels], grad_bias)?,
    })
}
