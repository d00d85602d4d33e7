use super::gemm::{gemm, Mat};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn check(input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    let (m, n) = match weights.shape() {
        &[m, n] => (m, n),
        other => return Err(Error::shape("dense weights (out, in)", &[0, input.len()], other)),
    };
    if input.len() != n {
        return Err(Error::shape("dense input", &[n], input.shape()));
    }
    Ok((m, n))
}

/// `weights · input + bias`. The input is read flat, so any rank works as
/// long as its element count matches the weight columns.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = check(input, weights)?;
    bias.ensure_shape("dense bias", &[m])?;
    input.ensure_finite("dense input")?;
    weights.ensure_finite("dense weights")?;
    bias.ensure_finite("dense bias")?;
    let mut out = bias.data().to_vec();
    gemm(Mat::new(weights.data(), m, n), Mat::new(input.data(), n, 1), 1.0, &mut out);
    Tensor::new(vec![m], out)
}

pub fn dense_backward(grad_out: &Tensor, input: &Tensor, weights: &Tensor) -> Result<DenseGrads> {
    let (m, n) = check(input, weights)?;
    grad_out.ensure_shape("dense grad_out", &[m])?;
    grad_out.ensure_finite("dense grad_out")?;
    let g = grad_out.data();

    let mut grad_weights = vec![0.0; m * n];
    gemm(Mat::new(g, m, 1), Mat::new(input.data(), 1, n), 0.0, &mut grad_weights);

    let mut grad_input = vec![0.0; n];
    gemm(Mat::new(weights.data(), m, n).t(), Mat::new(g, m, 1), 0.0, &mut grad_input);

    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), grad_input)?,
        weights: Tensor::new(vec![m, n], grad_weights)?,
        bias: grad_out.clone(),
    })
}
