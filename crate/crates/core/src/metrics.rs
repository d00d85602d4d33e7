//! Confusion-matrix evaluation: accuracy, macro-averaged F1, top-2 accuracy,
//! and mean/std aggregation over repeated runs.
//!
//! Conventions:
//! * argmax and top-2 ranking break ties toward the lowest class index;
//! * a class that is never predicted has precision 0, and F1 is 0 whenever
//!   precision + recall is 0;
//! * macro-F1 averages only over classes that occur in the truths.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::argmax;

const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn column_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub top2_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn validate_distribution(p: &[f64], classes: usize, row: usize) -> Result<()> {
    if p.len() != classes {
        return Err(Error::invalid(format!("prediction {row} has {} classes, expected {classes}", p.len())));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("prediction {row} has negative or non-finite probabilities")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(Error::invalid(format!("prediction {row} sums to {total}, not 1")));
    }
    Ok(())
}

/// The two highest-probability classes, ties toward the lower index.
pub fn top2(p: &[f64]) -> (usize, Option<usize>) {
    let first = argmax(p);
    let second = (0..p.len()).filter(|&c| c != first).fold(None, |best: Option<usize>, c| match best {
        Some(b) if p[b] >= p[c] => Some(b),
        _ => Some(c),
    });
    (first, second)
}

pub fn evaluate<P: AsRef<[f64]>>(predictions: &[P], truths: &[usize]) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!("{} predictions for {} truths", predictions.len(), truths.len())));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty prediction set"));
    }
    let classes = predictions[0].as_ref().len();
    if classes == 0 {
        return Err(Error::invalid("predictions have zero classes"));
    }

    let mut confusion = ConfusionMatrix::new(classes);
    let mut top2_hits = 0u64;
    for (row, (p, &truth)) in predictions.iter().zip(truths).enumerate() {
        let p = p.as_ref();
        validate_distribution(p, classes, row)?;
        if truth >= classes {
            return Err(Error::invalid(format!("truth {truth} at row {row} outside {classes} classes")));
        }
        let (first, second) = top2(p);
        confusion.record(truth, first);
        if truth == first || Some(truth) == second {
            top2_hits += 1;
        }
    }

    let total = confusion.total() as f64;
    let per_class: Vec<ClassMetrics> = (0..classes)
        .map(|c| {
            let tp = confusion.get(c, c) as f64;
            let predicted = confusion.column_sum(c) as f64;
            let support = confusion.row_sum(c);
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            // harmonic mean of precision and recall, as one division
            let f1 = if tp > 0.0 { 2.0 * tp / (predicted + support as f64) } else { 0.0 };
            ClassMetrics { precision, recall, f1, support }
        })
        .collect();

    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let macro_f1 = present.iter().map(|m| m.f1).sum::<f64>() / present.len() as f64;

    Ok(MetricsReport {
        accuracy: confusion.trace() as f64 / total,
        macro_f1,
        top2_accuracy: top2_hits as f64 / total,
        per_class,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Arithmetic mean and sample (n - 1) standard deviation; std is 0 for a
    /// single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub runs: usize,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub top2_accuracy: MeanStd,
}

pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<RunAggregate> {
    if reports.is_empty() {
        return Err(Error::invalid("cannot aggregate zero runs"));
    }
    let pick = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(RunAggregate {
        runs: reports.len(),
        accuracy: pick(|r| r.accuracy),
        macro_f1: pick(|r| r.macro_f1),
        top2_accuracy: pick(|r| r.top2_accuracy),
    })
}

/// Aligned text table in the `Classifier | Accuracy | F1 | Top 2 Accuracy`
/// layout, values in percent.
pub fn render_table(rows: &[(String, RunAggregate)]) -> String {
    let name_width = rows.iter().map(|(n, _)| n.len()).chain(std::iter::once("Classifier".len())).max().unwrap_or(10);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "| {:<name_width$} | {:>16} | {:>16} | {:>16} |",
        "Classifier", "Accuracy", "F1", "Top 2 Accuracy"
    );
    let _ = writeln!(out, "|{}|{}|{}|{}|", "-".repeat(name_width + 2), "-".repeat(18), "-".repeat(18), "-".repeat(18));
    let cell = |m: MeanStd| format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std);
    for (name, agg) in rows {
        let _ = writeln!(
            out,
            "| {:<name_width$} | {:>16} | {:>16} | {:>16} |",
            name,
            cell(agg.accuracy),
            cell(agg.macro_f1),
            cell(agg.top2_accuracy)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(k: usize, c: usize) -> Vec<f64> {
        (0..k).map(|i| if i == c { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn perfect_predictions() {
        let truths = [0, 1, 2, 3, 4, 2];
        let preds: Vec<_> = truths.iter().map(|&t| onehot(5, t)).collect();
        let r = evaluate(&preds, &truths).unwrap();
        assert_eq!((r.accuracy, r.macro_f1, r.top2_accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn fully_swapped_binary() {
        let preds = vec![onehot(2, 1), onehot(2, 0)];
        let r = evaluate(&preds, &[0, 1]).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.macro_f1, 0.0);
    }

    #[test]
    fn truth_ranked_second_counts_for_top2() {
        let preds = vec![vec![0.6, 0.1, 0.1, 0.1, 0.1], vec![0.1, 0.6, 0.1, 0.1, 0.1], vec![0.05, 0.5, 0.3, 0.1, 0.05]];
        let r = evaluate(&preds, &[0, 1, 2]).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.top2_accuracy, 1.0);
        // class 1: precision 1/2 recall 1 -> 2/3; class 0: 1; class 2: 0
        assert!((r.macro_f1 - (1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_go_low() {
        let preds = vec![vec![0.4, 0.4, 0.2]];
        let r = evaluate(&preds, &[1]).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.confusion.get(1, 0), 1);
        assert_eq!(top2(&[0.2, 0.4, 0.4]), (1, Some(2)));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(evaluate(&[vec![1.0, 0.0]], &[0, 1]).is_err());
        assert!(evaluate::<Vec<f64>>(&[], &[]).is_err());
        assert!(evaluate(&[vec![0.7, 0.7]], &[0]).is_err());
        assert!(evaluate(&[vec![1.0, 0.0]], &[2]).is_err());
    }

    #[test]
    fn aggregation() {
        let mk = |a| MetricsReport {
            accuracy: a,
            macro_f1: a,
            top2_accuracy: a,
            per_class: vec![],
            confusion: ConfusionMatrix::new(1),
        };
        let agg = aggregate_runs(&[mk(0.6), mk(0.8)]).unwrap();
        assert!((agg.accuracy.mean - 0.7).abs() < 1e-15);
        assert!((agg.accuracy.std - 0.02f64.sqrt()).abs() < 1e-15);
        let single = aggregate_runs(&[mk(0.9)]).unwrap();
        assert_eq!(single.accuracy, MeanStd { mean: 0.9, std: 0.0 });
        let same = aggregate_runs(&[mk(0.5), mk(0.5), mk(0.5)]).unwrap();
        assert_eq!(same.macro_f1.std, 0.0);
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn table_has_header_and_rows() {
        let agg = RunAggregate {
            runs: 1,
            accuracy: MeanStd { mean: 0.7135, std: 0.0 },
            macro_f1: MeanStd { mean: 0.7126, std: 0.0 },
            top2_accuracy: MeanStd { mean: 0.9323, std: 0.0 },
        };
        let t = render_table(&[("Basic CNN".into(), agg)]);
        assert!(t.contains("Top 2 Accuracy"));
        assert!(t.contains("71.35 ± 0.00"));
    }
}
