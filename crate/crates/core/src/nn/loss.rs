use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Guards `log(0)` in the cross-entropy.
pub const LOG_EPSILON: f64 = 1e-12;

/// Per-class loss multipliers `alpha_c = median(counts) / count_c`.
///
/// The exact rational value is kept alongside the `f64` used in training;
/// each `alpha` is the correctly rounded quotient of its rational.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub alpha: Vec<f64>,
    #[serde(skip)]
    exact: Vec<Ratio<u64>>,
}

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        ClassWeights { alpha: vec![1.0; classes], exact: vec![Ratio::from_integer(1); classes] }
    }

    pub fn exact(&self) -> &[Ratio<u64>] {
        &self.exact
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Median of the counts as an exact rational; for an even number of classes
/// it is the mean of the two central values.
pub fn median_count(counts: &[u64]) -> Ratio<u64> {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        Ratio::from_integer(sorted[n / 2])
    } else {
        Ratio::new(sorted[n / 2 - 1] + sorted[n / 2], 2)
    }
}

pub fn compute_class_weights(counts: &[u64]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::invalid("no classes to weight"));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no examples; merge or drop it before weighting")));
    }
    let median = median_count(counts);
    let exact: Vec<Ratio<u64>> = counts.iter().map(|&n| median / Ratio::from_integer(n)).collect();
    let alpha = exact.iter().map(|r| *r.numer() as f64 / *r.denom() as f64).collect();
    Ok(ClassWeights { alpha, exact })
}

/// Class-weighted cross-entropy of a probability vector, fused with the
/// preceding softmax: returns the loss and its gradient with respect to the
/// softmax *input* (`alpha_true · (probs − onehot)`).
pub fn weighted_cross_entropy(probs: &Tensor, true_class: usize, weights: &ClassWeights) -> Result<(f64, Tensor)> {
    let k = probs.len();
    if true_class >= k {
        return Err(Error::invalid(format!("true class {true_class} outside {k} classes")));
    }
    if weights.len() != k {
        return Err(Error::invalid(format!("{} class weights for {k} classes", weights.len())));
    }
    let alpha = weights.alpha[true_class];
    let loss = -alpha * (probs.data()[true_class] + LOG_EPSILON).ln();
    let mut grad = probs.clone();
    grad.data_mut()[true_class] -= 1.0;
    grad.data_mut().iter_mut().for_each(|g| *g *= alpha);
    Ok((loss, grad))
}

/// Gradient of the weighted cross-entropy with respect to the probabilities
/// themselves (the unfused path): `−alpha / p_true`, with the probability
/// floored at [`LOG_EPSILON`]. Chained through [`softmax_backward`] it equals
/// the fused gradient.
pub fn weighted_cross_entropy_grad_probs(probs: &Tensor, true_class: usize, weights: &ClassWeights) -> Result<Tensor> {
    if true_class >= probs.len() {
        return Err(Error::invalid(format!("true class {true_class} outside {} classes", probs.len())));
    }
    let mut g = Tensor::zeros(probs.shape());
    g.data_mut()[true_class] = -weights.alpha[true_class] / probs.data()[true_class].max(LOG_EPSILON);
    Ok(g)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(grad_probs: &Tensor, probs: &Tensor) -> Result<Tensor> {
    grad_probs.ensure_shape("softmax grad", probs.shape())?;
    let dot: f64 = grad_probs.data().iter().zip(probs.data()).map(|(g, p)| g * p).sum();
    let data = grad_probs.data().iter().zip(probs.data()).map(|(g, p)| p * (g - dot)).collect();
    Tensor::new(probs.shape().to_vec(), data)
}
