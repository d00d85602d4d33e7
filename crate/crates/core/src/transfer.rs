//! Softmax head over frozen, precomputed feature vectors.
//!
//! Feature files start with `feature_dim=<d>,format_version=1` followed by
//! CSV rows `image_id,label,f_1,...,f_d`. Labels are class indices or
//! density-class names.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{class_histogram, DensityClass, Example};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::nn::{
    init_parameters, predict, predict_batch, train, Layer, ModelConfig, ModelParameters, TrainConfig, TrainOutcome,
};
use crate::tensor::Tensor;

pub const FEATURE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub label: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub feature_dim: usize,
    pub rows: Vec<FeatureRow>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.iter().map(|r| r.label)
    }

    /// Rows as `[d, 1, 1]` examples for the network code.
    pub fn examples(&self) -> Result<Vec<Example>> {
        self.rows
            .iter()
            .map(|r| {
                Ok(Example { image: Tensor::new(vec![self.feature_dim, 1, 1], r.features.clone())?, label: r.label })
            })
            .collect()
    }

    /// First `train_fraction` of the rows, then the rest.
    pub fn split(&self, train_fraction: f64) -> (FeatureSet, FeatureSet) {
        let n = ((self.rows.len() as f64 * train_fraction).round() as usize).min(self.rows.len());
        let part = |rows: &[FeatureRow]| FeatureSet { feature_dim: self.feature_dim, rows: rows.to_vec() };
        (part(&self.rows[..n]), part(&self.rows[n..]))
    }
}

fn parse_label(s: &str) -> Result<usize> {
    match s.trim().parse::<usize>() {
        Ok(i) => Ok(i),
        Err(_) => Ok(s.parse::<DensityClass>()?.index()),
    }
}

fn parse_header(line: &str) -> std::result::Result<usize, String> {
    let mut dim = None;
    let mut version = None;
    for field in line.trim().split(',') {
        match field.split_once('=') {
            Some(("feature_dim", v)) => dim = v.trim().parse::<usize>().ok(),
            Some(("format_version", v)) => version = v.trim().parse::<u32>().ok(),
            _ => return Err(format!("unexpected header field {field:?}")),
        }
    }
    match (dim, version) {
        (Some(d), Some(FEATURE_FORMAT_VERSION)) if d > 0 => Ok(d),
        (_, Some(v)) if v != FEATURE_FORMAT_VERSION => Err(format!("format_version {v} unsupported")),
        _ => Err(format!("header must be feature_dim=<d>,format_version={FEATURE_FORMAT_VERSION}, got {line:?}")),
    }
}

pub fn parse_features(text: &str, path: &Path) -> Result<FeatureSet> {
    let mut lines = text.splitn(2, '\n');
    let header = lines.next().unwrap_or("");
    if header.trim().is_empty() {
        return Err(Error::format(path, "empty feature file"));
    }
    let feature_dim = parse_header(header).map_err(|m| Error::format(path, m))?;
    let body = lines.next().unwrap_or("");
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(body.as_bytes());

    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() + 1);
        if record.len() != feature_dim + 2 {
            bad.push(format!("line {line}: {} features, expected {feature_dim}", record.len().saturating_sub(2)));
            continue;
        }
        let label = match parse_label(&record[1]) {
            Ok(l) => l,
            Err(e) => {
                bad.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let features: std::result::Result<Vec<f64>, _> =
            record.iter().skip(2).map(|v| v.trim().parse::<f64>()).collect();
        match features {
            Ok(f) if f.iter().all(|v| v.is_finite()) => {
                rows.push(FeatureRow { image_id: record[0].to_string(), label, features: f })
            }
            Ok(_) => bad.push(format!("line {line}: non-finite feature")),
            Err(e) => bad.push(format!("line {line}: {e}")),
        }
    }
    if !bad.is_empty() {
        return Err(Error::InvalidRows(bad));
    }
    if rows.is_empty() {
        return Err(Error::format(path, "no feature rows"));
    }
    Ok(FeatureSet { feature_dim, rows })
}

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text, path)
}

pub fn write_features<W: Write>(out: W, set: &FeatureSet) -> Result<()> {
    let mut out = out;
    writeln!(out, "feature_dim={},format_version={FEATURE_FORMAT_VERSION}", set.feature_dim)
        .map_err(|e| Error::io("<features>", e))?;
    let mut w = csv::Writer::from_writer(out);
    for row in &set.rows {
        let mut record = vec![row.image_id.clone(), row.label.to_string()];
        record.extend(row.features.iter().map(|v| format!("{v}")));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))
}

pub fn save_features(path: &Path, set: &FeatureSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_features(std::io::BufWriter::new(file), set)
}

/// Gaussian class clusters: each class gets a random centre with
/// coordinates drawn from `N(0, separation²)`; rows add `N(0, noise²)`.
pub fn synthetic_features(
    per_class: &[usize],
    dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<FeatureSet> {
    if dim == 0 {
        return Err(Error::invalid("feature dimension must be positive"));
    }
    let centre = Normal::new(0.0, separation).map_err(|e| Error::invalid(e.to_string()))?;
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> =
        per_class.iter().map(|_| (0..dim).map(|_| centre.sample(&mut rng)).collect()).collect();
    let mut rows = Vec::new();
    for (label, &n) in per_class.iter().enumerate() {
        for i in 0..n {
            rows.push(FeatureRow {
                image_id: format!("syn-{label}-{i}"),
                label,
                features: centres[label].iter().map(|c| c + jitter.sample(&mut rng)).collect(),
            });
        }
    }
    rows.shuffle(&mut rng);
    Ok(FeatureSet { feature_dim: dim, rows })
}

/// Multinomial logistic regression: `softmax(W·f + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub config: ModelConfig,
    pub params: ModelParameters,
}

impl Head {
    pub fn config_for(feature_dim: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            input_shape: [feature_dim, 1, 1],
            layers: vec![Layer::Flatten, Layer::Dense { units: classes }, Layer::Softmax],
            class_count: classes,
        }
    }

    pub fn new(feature_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let config = Head::config_for(feature_dim, classes);
        let params = init_parameters(&config, seed)?;
        Ok(Head { config, params })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.input_shape[0]
    }

    /// `k × d` weight matrix.
    pub fn weights(&self) -> &Tensor {
        &self.dense().weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.dense().bias
    }

    fn dense(&self) -> &crate::nn::LayerParams {
        self.params.layers[1].as_ref().expect("dense layer has parameters")
    }
}

/// The head after training, with its loss history.
#[derive(Debug, Clone)]
pub struct HeadOutcome {
    pub head: Head,
    pub outcome: TrainOutcome,
}

/// Trains a fresh head with the network SGD and weighted cross-entropy.
/// Augmentation is image-only and is rejected here.
pub fn train_head(
    features: &FeatureSet,
    validation: &FeatureSet,
    classes: usize,
    cfg: &TrainConfig,
) -> Result<HeadOutcome> {
    if cfg.augmentation {
        return Err(Error::invalid("augmentation does not apply to feature vectors"));
    }
    if validation.feature_dim != features.feature_dim && !validation.is_empty() {
        return Err(Error::shape("validation features", &[features.feature_dim], &[validation.feature_dim]));
    }
    if let Some(bad) = features.labels().chain(validation.labels()).find(|&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside {classes} classes")));
    }
    let counts = class_histogram(features.labels(), classes);
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {missing} has no training rows")));
    }
    let head = Head::new(features.feature_dim, classes, cfg.seed)?;
    let outcome = train(&head.config, head.params.clone(), &features.examples()?, &validation.examples()?, cfg)?;
    Ok(HeadOutcome { head: Head { config: head.config, params: outcome.params.clone() }, outcome })
}

pub fn predict_head(head: &Head, features: &[f64]) -> Result<Tensor> {
    if features.len() != head.feature_dim() {
        return Err(Error::shape("feature vector", &[head.feature_dim()], &[features.len()]));
    }
    predict(&head.config, &head.params, &Tensor::new(vec![features.len(), 1, 1], features.to_vec())?)
}

pub fn evaluate_head(head: &Head, set: &FeatureSet) -> Result<MetricsReport> {
    if set.feature_dim != head.feature_dim() {
        return Err(Error::shape("feature set", &[head.feature_dim()], &[set.feature_dim]));
    }
    let images: Vec<Tensor> = set.examples()?.into_iter().map(|e| e.image).collect();
    let probs = predict_batch(&head.config, &head.params, &images)?;
    let probs: Vec<&[f64]> = probs.iter().map(|p| p.data()).collect();
    evaluate(&probs, &set.labels().collect::<Vec<_>>())
}
