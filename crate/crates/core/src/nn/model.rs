use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    avgpool2d, avgpool2d_backward, conv2d_backward_raw, conv2d_forward_raw, gemm, gemm_scaled, maxpool2d_backward_raw,
    maxpool2d_raw, ConvGeometry, ConvSpec, Mat, Padding, PoolSpec, PoolStatistic, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv(ConvSpec),
    Pool(PoolSpec),
    Relu,
    Flatten,
    Dense { units: usize },
    Softmax,
}

/// Layer stack plus the input geometry it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `(channels, height, width)`.
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
    pub class_count: usize,
}

impl ModelConfig {
    /// Three conv/relu/max-pool stages (16, 32, 64 channels, 3×3 same-padded
    /// kernels, 2×2 pooling), a 128-unit hidden layer and a softmax output.
    pub fn basic_cnn(channels: usize, height: usize, width: usize, class_count: usize) -> Self {
        let mut layers = Vec::new();
        let mut c_in = channels;
        for c_out in [16, 32, 64] {
            layers.push(Layer::Conv(ConvSpec::new(c_in, c_out, 3).with_padding(Padding::Same)));
            layers.push(Layer::Relu);
            layers.push(Layer::Pool(PoolSpec::max(2, 2)));
            c_in = c_out;
        }
        layers.extend([
            Layer::Flatten,
            Layer::Dense { units: 128 },
            Layer::Relu,
            Layer::Dense { units: class_count },
            Layer::Softmax,
        ]);
        ModelConfig { input_shape: [channels, height, width], layers, class_count }
    }

    /// The default five-class model on 128×128 grayscale frames.
    pub fn default_density() -> Self {
        Self::basic_cnn(1, 128, 128, 5)
    }

    /// Output shape of every layer, validating that the stack chains and ends
    /// in a softmax over `class_count` values.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.contains(&0) || self.class_count == 0 {
            return Err(Error::invalid("input extents and class count must be positive"));
        }
        let mut shape = self.input_shape.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                Layer::Conv(spec) => {
                    if shape.len() != 3 || shape[0] != spec.in_channels {
                        return Err(Error::shape(format!("layer {i} conv input"), &[spec.in_channels, 0, 0], &shape));
                    }
                    spec.output_shape(shape[1], shape[2])?.to_vec()
                }
                Layer::Pool(spec) => spec.output_shape(&shape)?.to_vec(),
                Layer::Relu => shape,
                Layer::Flatten => vec![shape.iter().product()],
                Layer::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(Error::invalid(format!("layer {i}: dense needs a flat input, got {shape:?}")));
                    }
                    if units == 0 {
                        return Err(Error::invalid(format!("layer {i}: dense with zero units")));
                    }
                    vec![units]
                }
                Layer::Softmax => {
                    if shape.len() != 1 {
                        return Err(Error::invalid(format!("layer {i}: softmax needs a flat input")));
                    }
                    shape
                }
            };
            shapes.push(shape.clone());
        }
        if self.layers.last() != Some(&Layer::Softmax) {
            return Err(Error::invalid("final layer must be softmax"));
        }
        if self.layers[..self.layers.len() - 1].contains(&Layer::Softmax) {
            return Err(Error::invalid("softmax is only supported as the final layer"));
        }
        if shape != [self.class_count] {
            return Err(Error::shape("model output", &[self.class_count], &shape));
        }
        Ok(shapes)
    }

    pub(crate) fn layer_inputs(&self) -> Result<Vec<Vec<usize>>> {
        let outputs = self.layer_shapes()?;
        let mut inputs = vec![self.input_shape.to_vec()];
        inputs.extend(outputs.into_iter().take(self.layers.len() - 1));
        Ok(inputs)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        let inputs = self.layer_inputs()?;
        Ok(self
            .layers
            .iter()
            .zip(&inputs)
            .map(|(layer, input)| match *layer {
                Layer::Conv(spec) => spec.parameter_count(),
                Layer::Dense { units } => units * input[0] + units,
                _ => 0,
            })
            .sum())
    }
}

/// Weights and bias of one trainable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Trainable values, one slot per layer (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub seed: u64,
    pub layers: Vec<Option<LayerParams>>,
}

impl ModelParameters {
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flatten().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    /// Every trainable value, layer by layer, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for p in self.layers.iter().flatten() {
            out.extend_from_slice(p.weights.data());
            out.extend_from_slice(p.bias.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.parameter_count(), "flat parameter length");
        let mut at = 0;
        for p in self.layers.iter_mut().flatten() {
            for t in [&mut p.weights, &mut p.bias] {
                let n = t.len();
                t.data_mut().copy_from_slice(&values[at..at + n]);
                at += n;
            }
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        ModelParameters {
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weights: Tensor::zeros(p.weights.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        }
    }

    pub(crate) fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let inputs = config.layer_inputs()?;
        if self.layers.len() != config.layers.len() {
            return Err(Error::invalid(format!(
                "parameters for {} layers, config has {}",
                self.layers.len(),
                config.layers.len()
            )));
        }
        for (i, ((layer, input), params)) in config.layers.iter().zip(&inputs).zip(&self.layers).enumerate() {
            match (expected_param_shapes(layer, input), params) {
                (None, None) => {}
                (Some((w, b)), Some(p)) => {
                    p.weights.ensure_shape(&format!("layer {i} weights"), &w)?;
                    p.bias.ensure_shape(&format!("layer {i} bias"), &b)?;
                }
                _ => return Err(Error::invalid(format!("layer {i}: parameter slot does not match layer kind"))),
            }
        }
        Ok(())
    }
}

fn expected_param_shapes(layer: &Layer, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    match *layer {
        Layer::Conv(spec) => Some((spec.kernel_shape().to_vec(), vec![spec.out_channels])),
        Layer::Dense { units } => Some((vec![units, input[0]], vec![units])),
        _ => None,
    }
}

/// Glorot-uniform weights, `U(−b, b)` with `b = sqrt(6 / (fan_in + fan_out))`;
/// zero biases. Deterministic in `seed`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn init_parameters(config: &ModelConfig, seed: u64) -> Result<ModelParameters> {
    let inputs = config.layer_inputs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = config
        .layers
        .iter()
        .zip(&inputs)
        .map(|(layer, input)| {
            let (w_shape, b_shape) = expected_param_shapes(layer, input)?;
            let (fan_in, fan_out) = match *layer {
                Layer::Conv(s) => {
                    let area = s.kernel_height * s.kernel_width;
                    (s.in_channels * area, s.out_channels * area)
                }
                Layer::Dense { units } => (input[0], units),
                _ => unreachable!("only trainable layers have shapes"),
            };
            let bound = glorot_bound(fan_in, fan_out);
            Some(LayerParams {
                weights: Tensor::from_fn(&w_shape, |_| rng.random_range(-bound..bound)),
                bias: Tensor::zeros(&b_shape),
            })
        })
        .collect();
    Ok(ModelParameters { seed, layers })
}

/// Intermediate values of one batched forward pass, kept for
/// backpropagation. Every buffer holds the batch contiguously, example-major.
pub(crate) struct Trace {
    batch: usize,
    /// Input shape of every layer.
    shapes: Vec<Vec<usize>>,
    /// Input of every layer.
    inputs: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    /// `batch × class_count` probabilities.
    pub probs: Vec<f64>,
}

impl Trace {
    pub fn probs_of(&self, example: usize) -> &[f64] {
        let k = self.probs.len() / self.batch;
        &self.probs[example * k..(example + 1) * k]
    }
}

fn softmax_rows(logits: &mut [f64], k: usize) {
    for row in logits.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
}

/// Runs a batch of images through the model. Images must already match the
/// config's input shape.
pub(crate) fn forward_trace(config: &ModelConfig, params: &ModelParameters, images: &[&Tensor]) -> Result<Trace> {
    if images.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for image in images {
        image.ensure_shape("model input", &config.input_shape)?;
    }
    let shapes = config.layer_inputs()?;
    let batch = images.len();
    let mut x: Vec<f64> = images.iter().flat_map(|im| im.data().iter().copied()).collect();
    let mut inputs = Vec::with_capacity(config.layers.len());
    let mut argmax = Vec::with_capacity(config.layers.len());
    let mut cols = Vec::new();
    for (i, (layer, p)) in config.layers.iter().zip(&params.layers).enumerate() {
        let in_shape = &shapes[i];
        let in_len: usize = in_shape.iter().product();
        let mut map = Vec::new();
        let y = match (*layer, p) {
            (Layer::Conv(spec), Some(p)) => {
                let g = ConvGeometry::new([in_shape[0], in_shape[1], in_shape[2]], &spec)?;
                let out_len = spec.output_shape(in_shape[1], in_shape[2])?.iter().product::<usize>();
                let mut y = vec![0.0; batch * out_len];
                for (xb, yb) in x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)) {
                    conv2d_forward_raw(xb, &g, p.weights.data(), p.bias.data(), &spec, &mut cols, yb);
                }
                y
            }
            (Layer::Dense { units }, Some(p)) => {
                let mut y: Vec<f64> = (0..batch).flat_map(|_| p.bias.data().iter().copied()).collect();
                gemm(Mat::new(&x, batch, in_len), Mat::new(p.weights.data(), units, in_len).t(), 1.0, &mut y);
                y
            }
            (Layer::Pool(spec), _) => {
                let [c, oh, ow] = spec.output_shape(in_shape)?;
                let out_len = c * oh * ow;
                let mut y = vec![0.0; batch * out_len];
                match spec.statistic {
                    PoolStatistic::Max => {
                        map = vec![0; batch * out_len];
                        let dims = [in_shape[0], in_shape[1], in_shape[2]];
                        for ((xb, yb), mb) in
                            x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)).zip(map.chunks_exact_mut(out_len))
                        {
                            maxpool2d_raw(xb, dims, [oh, ow], &spec, yb, mb);
                        }
                    }
                    PoolStatistic::Average => {
                        for (xb, yb) in x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)) {
                            let t = avgpool2d(&Tensor::new(in_shape.clone(), xb.to_vec())?, &spec)?;
                            yb.copy_from_slice(t.data());
                        }
                    }
                }
                y
            }
            (Layer::Relu, _) => x.iter().map(|v| v.max(0.0)).collect(),
            (Layer::Flatten, _) => x.clone(),
            (Layer::Softmax, _) => {
                let mut y = x.clone();
                softmax_rows(&mut y, in_len);
                y
            }
            _ => return Err(Error::invalid("parameters missing for a trainable layer")),
        };
        inputs.push(std::mem::replace(&mut x, y));
        argmax.push(map);
    }
    Ok(Trace { batch, shapes, inputs, argmax, probs: x })
}

/// Accumulates `scale ×` the parameter gradients of the batch into `grads`,
/// given the gradient with respect to the logits (the softmax input) of
/// every example, laid out like [`Trace::probs`].
pub(crate) fn backward(
    config: &ModelConfig,
    params: &ModelParameters,
    trace: &Trace,
    grad_logits: Vec<f64>,
    grads: &mut ModelParameters,
    scale: f64,
) -> Result<()> {
    let batch = trace.batch;
    let last = config.layers.len() - 1;
    let mut g = grad_logits;
    let mut cols = Vec::new();
    for i in (0..last).rev() {
        let input = &trace.inputs[i];
        let in_shape = &trace.shapes[i];
        let in_len: usize = in_shape.iter().product();
        let out_len = g.len() / batch;
        let need_input = i > 0;
        g = match (config.layers[i], &params.layers[i]) {
            (Layer::Conv(spec), Some(p)) => {
                let geo = ConvGeometry::new([in_shape[0], in_shape[1], in_shape[2]], &spec)?;
                let slot = grads.layers[i].as_mut().expect("grad slot");
                let mut gx = vec![0.0; if need_input { batch * in_len } else { 0 }];
                for b in 0..batch {
                    let gx_b = need_input.then(|| &mut gx[b * in_len..(b + 1) * in_len]);
                    conv2d_backward_raw(
                        &g[b * out_len..(b + 1) * out_len],
                        &input[b * in_len..(b + 1) * in_len],
                        &geo,
                        p.weights.data(),
                        &spec,
                        scale,
                        slot.weights.data_mut(),
                        slot.bias.data_mut(),
                        gx_b,
                        &mut cols,
                    );
                }
                gx
            }
            (Layer::Dense { units }, Some(p)) => {
                let slot = grads.layers[i].as_mut().expect("grad slot");
                gemm_scaled(
                    scale,
                    Mat::new(&g, batch, units).t(),
                    Mat::new(input, batch, in_len),
                    1.0,
                    slot.weights.data_mut(),
                );
                for row in g.chunks_exact(units) {
                    for (d, v) in slot.bias.data_mut().iter_mut().zip(row) {
                        *d += scale * v;
                    }
                }
                let mut gx = vec![0.0; if need_input { batch * in_len } else { 0 }];
                if need_input {
                    gemm(Mat::new(&g, batch, units), Mat::new(p.weights.data(), units, in_len), 0.0, &mut gx);
                }
                gx
            }
            (Layer::Pool(spec), _) => {
                let mut gx = vec![0.0; batch * in_len];
                match spec.statistic {
                    PoolStatistic::Max => {
                        for ((gb, mb), gxb) in g
                            .chunks_exact(out_len)
                            .zip(trace.argmax[i].chunks_exact(out_len))
                            .zip(gx.chunks_exact_mut(in_len))
                        {
                            maxpool2d_backward_raw(gb, mb, gxb);
                        }
                    }
                    PoolStatistic::Average => {
                        let out_shape = spec.output_shape(in_shape)?.to_vec();
                        for (gb, gxb) in g.chunks_exact(out_len).zip(gx.chunks_exact_mut(in_len)) {
                            let t = avgpool2d_backward(&Tensor::new(out_shape.clone(), gb.to_vec())?, in_shape, &spec)?;
                            gxb.copy_from_slice(t.data());
                        }
                    }
                }
                gx
            }
            (Layer::Relu, _) => g.iter().zip(input).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect(),
            (Layer::Flatten, _) => g,
            _ => return Err(Error::invalid("unsupported layer in backward pass")),
        };
    }
    Ok(())
}

/// Class probabilities for one image.
pub fn predict(config: &ModelConfig, params: &ModelParameters, image: &Tensor) -> Result<Tensor> {
    let probs = predict_batch(config, params, std::slice::from_ref(image))?;
    Ok(probs.into_iter().next().expect("one prediction"))
}

/// Class probabilities for several images, evaluated together.
pub fn predict_batch(config: &ModelConfig, params: &ModelParameters, images: &[Tensor]) -> Result<Vec<Tensor>> {
    params.check_against(config)?;
    for image in images {
        image.ensure_finite("model input")?;
    }
    let refs: Vec<&Tensor> = images.iter().collect();
    let trace = forward_trace(config, params, &refs)?;
    let out: Vec<Tensor> = (0..images.len()).map(|b| Tensor::vector(trace.probs_of(b))).collect();
    if let Some(bad) = out.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("prediction {bad} is not finite")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_shape: [1, 6, 6],
            layers: vec![
                Layer::Conv(ConvSpec::new(1, 2, 3)),
                Layer::Relu,
                Layer::Pool(PoolSpec::max(2, 2)),
                Layer::Flatten,
                Layer::Dense { units: 3 },
                Layer::Softmax,
            ],
            class_count: 3,
        }
    }

    #[test]
    fn basic_cnn_chains() {
        let cfg = ModelConfig::default_density();
        let shapes = cfg.layer_shapes().unwrap();
        assert_eq!(shapes[2], vec![16, 64, 64]);
        assert_eq!(shapes[8], vec![64, 16, 16]);
        assert_eq!(shapes.last().unwrap(), &vec![5]);
    }

    #[test]
    fn broken_chain_rejected() {
        let mut cfg = tiny();
        cfg.layers.remove(3);
        assert!(cfg.layer_shapes().is_err());
        let mut cfg = tiny();
        cfg.layers.pop();
        assert!(cfg.layer_shapes().is_err());
        let mut cfg = tiny();
        cfg.class_count = 4;
        assert!(cfg.layer_shapes().is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = tiny();
        let a = init_parameters(&cfg, 7).unwrap();
        let b = init_parameters(&cfg, 7).unwrap();
        let c = init_parameters(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let conv = a.layers[0].as_ref().unwrap();
        let bound = glorot_bound(9, 18);
        assert!(conv.weights.data().iter().all(|w| w.abs() < bound));
        assert!(conv.bias.data().iter().all(|&b| b == 0.0));
        assert_eq!(a.parameter_count(), cfg.parameter_count().unwrap());
    }

    #[test]
    fn glorot_bound_for_first_layer() {
        assert_eq!(glorot_bound(9, 144), (6.0f64 / 153.0).sqrt());
    }

    #[test]
    fn predict_is_a_distribution() {
        let cfg = tiny();
        let params = init_parameters(&cfg, 1).unwrap();
        let p = predict(&cfg, &params, &Tensor::zeros(&[1, 6, 6])).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(predict(&cfg, &params, &Tensor::zeros(&[1, 5, 6])).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let cfg = tiny();
        let mut p = init_parameters(&cfg, 3).unwrap();
        let flat = p.flatten();
        let mut q = p.zeros_like();
        q.assign_flat(&flat);
        assert_eq!(p.flatten(), q.flatten());
        p.assign_flat(&vec![0.5; flat.len()]);
        assert!(p.flatten().iter().all(|&v| v == 0.5));
    }
}
