use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{compute_class_weights, weighted_cross_entropy, ClassWeights};
use super::model::{backward, forward_trace, predict_batch, ModelConfig, ModelParameters};
use crate::data::{augment, class_histogram, AugmentConfig, Example};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Drives batch order and augmentation draws.
    pub seed: u64,
    pub augmentation: bool,
    pub augment: AugmentConfig,
    /// Scale each example's loss by `median_count / count_class` of the
    /// training set.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            augmentation: false,
            augment: AugmentConfig::default(),
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_macro_f1: Option<f64>,
    pub val_top2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch whose loss stayed finite.
    pub params: ModelParameters,
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) at which training stopped on a non-finite loss.
    pub diverged_at: Option<usize>,
}

/// Mean loss over `examples` and its gradient with respect to every parameter.
pub fn batch_gradient(
    config: &ModelConfig,
    params: &ModelParameters,
    examples: &[&Example],
    weights: &ClassWeights,
) -> Result<(f64, ModelParameters)> {
    let mut grads = params.zeros_like();
    let scale = 1.0 / examples.len() as f64;
    let images: Vec<&Tensor> = examples.iter().map(|ex| &ex.image).collect();
    let trace = forward_trace(config, params, &images)?;
    let mut loss = 0.0;
    let mut grad_logits = Vec::with_capacity(trace.probs.len());
    for (b, ex) in examples.iter().enumerate() {
        let probs = Tensor::vector(trace.probs_of(b));
        let (l, g) = weighted_cross_entropy(&probs, ex.label, weights)?;
        loss += l * scale;
        grad_logits.extend_from_slice(g.data());
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {loss}")));
    }
    backward(config, params, &trace, grad_logits, &mut grads, scale)?;
    Ok((loss, grads))
}

pub fn evaluate_model(config: &ModelConfig, params: &ModelParameters, examples: &[Example]) -> Result<MetricsReport> {
    let mut probs = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let images: Vec<Tensor> = chunk.iter().map(|ex| ex.image.clone()).collect();
        probs.extend(predict_batch(config, params, &images)?.into_iter().map(Tensor::into_data));
    }
    let truths: Vec<usize> = examples.iter().map(|ex| ex.label).collect();
    evaluate(&probs, &truths)
}

fn is_divergence(err: &Error) -> bool {
    matches!(err, Error::NonFinite(_))
}

/// Mini-batch SGD with momentum. Deterministic for a fixed
/// `(params, data, cfg)`; runs on the calling thread only.
pub fn train(
    config: &ModelConfig,
    params: ModelParameters,
    train_set: &[Example],
    validation: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_until(config, params, train_set, validation, cfg, |_| false)
}

/// [`train`], stopping after the first epoch for which `stop` returns true.
pub fn train_until(
    config: &ModelConfig,
    params: ModelParameters,
    train_set: &[Example],
    validation: &[Example],
    cfg: &TrainConfig,
    mut stop: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    params.check_against(config)?;
    if let Some(ex) = train_set.iter().chain(validation).find(|ex| ex.label >= config.class_count) {
        return Err(Error::invalid(format!("label {} outside {} classes", ex.label, config.class_count)));
    }

    let weights = if cfg.class_weighting {
        compute_class_weights(&class_histogram(train_set.iter().map(|e| e.label), config.class_count))?
    } else {
        ClassWeights::uniform(config.class_count)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = params;
    let mut velocity = params.zeros_like();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let checkpoint = params.clone();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut diverged = false;
        for batch in order.chunks(cfg.batch_size) {
            let augmented: Vec<Example>;
            let examples: Vec<&Example> = if cfg.augmentation {
                augmented = batch
                    .iter()
                    .map(|&i| Example {
                        image: augment(&train_set[i].image, &mut rng, &cfg.augment),
                        label: train_set[i].label,
                    })
                    .collect();
                augmented.iter().collect()
            } else {
                batch.iter().map(|&i| &train_set[i]).collect()
            };
            let (loss, grads) = match batch_gradient(config, &params, &examples, &weights) {
                Ok(r) => r,
                Err(e) if is_divergence(&e) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            epoch_loss += loss * batch.len() as f64;
            sgd_momentum_update(&mut params, &mut velocity, &grads, cfg.learning_rate, cfg.momentum);
        }
        if diverged || !params.flatten().iter().all(|v| v.is_finite()) {
            log::warn!("training diverged in epoch {epoch}; keeping parameters from epoch {}", epoch - 1);
            return Ok(TrainOutcome { params: checkpoint, history, diverged_at: Some(epoch) });
        }

        let report = if validation.is_empty() { None } else { Some(evaluate_model(config, &params, validation)?) };
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_accuracy: report.as_ref().map(|r| r.accuracy),
            val_macro_f1: report.as_ref().map(|r| r.macro_f1),
            val_top2: report.as_ref().map(|r| r.top2_accuracy),
        };
        log::debug!("epoch {epoch}: loss {:.5} val acc {:?}", record.train_loss, record.val_accuracy);
        let done = stop(&record);
        history.push(record);
        if done {
            break;
        }
    }
    Ok(TrainOutcome { params, history, diverged_at: None })
}

/// `v ← μ·v − lr·g; p ← p + v`
pub fn sgd_momentum_update(
    params: &mut ModelParameters,
    velocity: &mut ModelParameters,
    grads: &ModelParameters,
    learning_rate: f64,
    momentum: f64,
) {
    for ((p, v), g) in params.layers.iter_mut().zip(&mut velocity.layers).zip(&grads.layers) {
        let (Some(p), Some(v), Some(g)) = (p.as_mut(), v.as_mut(), g.as_ref()) else {
            continue;
        };
        for (pt, vt, gt) in [(&mut p.weights, &mut v.weights, &g.weights), (&mut p.bias, &mut v.bias, &g.bias)] {
            for ((pi, vi), gi) in pt.data_mut().iter_mut().zip(vt.data_mut()).zip(gt.data()) {
                *vi = momentum * *vi - learning_rate * gi;
                *pi += *vi;
            }
        }
    }
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_accuracy,val_macro_f1,val_top2";

pub fn write_history_csv<W: Write>(mut out: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            opt(r.val_accuracy),
            opt(r.val_macro_f1),
            opt(r.val_top2)
        )?;
    }
    Ok(())
}

pub fn save_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history_csv(std::io::BufWriter::new(file), history).map_err(|e| Error::io(path, e))
}
