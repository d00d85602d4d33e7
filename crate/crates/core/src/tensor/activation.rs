use super::Tensor;
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Result<Tensor> {
    input.ensure_finite("relu input")?;
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(out)
}

/// Gradient passes where the cached input is strictly positive; the
/// subgradient at exactly zero is taken as 0.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    grad_out.ensure_shape("relu grad_out", input.shape())?;
    grad_out.ensure_finite("relu grad_out")?;
    let data = grad_out.data().iter().zip(input.data()).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Numerically stable softmax over all elements (max-subtracted).
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    logits.ensure_finite("softmax logits")?;
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.clone();
    let mut total = 0.0;
    for v in out.data_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    out.data_mut().iter_mut().for_each(|v| *v /= total);
    Ok(out)
}
