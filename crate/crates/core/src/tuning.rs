//! Grid search over training hyperparameters, each point scored as the mean
//! of repeated seeded runs.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{aggregate_runs, MetricsReport, RunAggregate};
use crate::nn::TrainConfig;

/// One named axis and its candidate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    LearningRate(Vec<f64>),
    BatchSize(Vec<usize>),
    Epochs(Vec<usize>),
    Momentum(Vec<f64>),
    Augmentation(Vec<bool>),
    ClassWeighting(Vec<bool>),
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::LearningRate(_) => "learning_rate",
            Axis::BatchSize(_) => "batch_size",
            Axis::Epochs(_) => "epochs",
            Axis::Momentum(_) => "momentum",
            Axis::Augmentation(_) => "augmentation",
            Axis::ClassWeighting(_) => "class_weighting",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Axis::LearningRate(v) | Axis::Momentum(v) => v.len(),
            Axis::BatchSize(v) | Axis::Epochs(v) => v.len(),
            Axis::Augmentation(v) | Axis::ClassWeighting(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sets value `i` on `cfg`; returns its display form.
    fn apply(&self, i: usize, cfg: &mut TrainConfig) -> String {
        match self {
            Axis::LearningRate(v) => {
                cfg.learning_rate = v[i];
                v[i].to_string()
            }
            Axis::BatchSize(v) => {
                cfg.batch_size = v[i];
                v[i].to_string()
            }
            Axis::Epochs(v) => {
                cfg.epochs = v[i];
                v[i].to_string()
            }
            Axis::Momentum(v) => {
                cfg.momentum = v[i];
                v[i].to_string()
            }
            Axis::Augmentation(v) => {
                cfg.augmentation = v[i];
                v[i].to_string()
            }
            Axis::ClassWeighting(v) => {
                cfg.class_weighting = v[i];
                v[i].to_string()
            }
        }
    }

    /// Parses `name=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Axis> {
        let (name, values) =
            spec.split_once('=').ok_or_else(|| Error::invalid(format!("axis {spec:?} must look like name=v1,v2")))?;
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        fn all<T: std::str::FromStr>(items: &[&str], name: &str) -> Result<Vec<T>> {
            items
                .iter()
                .map(|s| s.parse::<T>().map_err(|_| Error::invalid(format!("bad {name} value {s:?}"))))
                .collect()
        }
        let axis = match name.trim() {
            "learning_rate" | "lr" => Axis::LearningRate(all(&items, name)?),
            "batch_size" | "batch" => Axis::BatchSize(all(&items, name)?),
            "epochs" => Axis::Epochs(all(&items, name)?),
            "momentum" => Axis::Momentum(all(&items, name)?),
            "augmentation" | "augment" => Axis::Augmentation(all(&items, name)?),
            "class_weighting" | "weighting" => Axis::ClassWeighting(all(&items, name)?),
            other => return Err(Error::invalid(format!("unknown grid axis {other:?}"))),
        };
        Ok(axis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Axis>,
    /// Largest number of points allowed.
    pub cap: usize,
}

/// One combination of axis values applied to a base config.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub values: Vec<(&'static str, String)>,
    pub config: TrainConfig,
}

impl Grid {
    pub fn new(axes: Vec<Axis>, cap: usize) -> Self {
        Grid { axes, cap }
    }

    pub fn size(&self) -> Option<usize> {
        self.axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(axis) = self.axes.iter().find(|a| a.is_empty()) {
            return Err(Error::invalid(format!("grid axis {} has no values", axis.name())));
        }
        match self.size() {
            Some(n) if n <= self.cap => Ok(()),
            n => Err(Error::invalid(format!(
                "grid has {} points ({}), cap is {}",
                n.map_or("overflowing".to_string(), |n| n.to_string()),
                self.axes.iter().map(|a| format!("{}×{}", a.name(), a.len())).collect::<Vec<_>>().join(" "),
                self.cap
            ))),
        }
    }

    /// Cartesian product, first axis varying slowest.
    pub fn points(&self, base: &TrainConfig) -> Result<Vec<GridPoint>> {
        self.validate()?;
        let size = self.size().expect("validated");
        Ok((0..size)
            .map(|index| {
                let mut config = *base;
                let mut rest = index;
                let mut digits = vec![0; self.axes.len()];
                for (k, axis) in self.axes.iter().enumerate().rev() {
                    digits[k] = rest % axis.len();
                    rest /= axis.len();
                }
                let values =
                    self.axes.iter().zip(&digits).map(|(axis, &d)| (axis.name(), axis.apply(d, &mut config))).collect();
                GridPoint { index, values, config }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Accuracy,
    MacroF1,
    Top2,
}

impl Selection {
    fn score(self, agg: &RunAggregate) -> f64 {
        match self {
            Selection::Accuracy => agg.accuracy.mean,
            Selection::MacroF1 => agg.macro_f1.mean,
            Selection::Top2 => agg.top2_accuracy.mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub point: GridPoint,
    pub runs: Vec<(u64, MetricsReport)>,
    pub aggregate: RunAggregate,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: usize,
    pub selection: Selection,
    pub results: Vec<PointResult>,
}

impl SearchResult {
    pub fn best_point(&self) -> &PointResult {
        &self.results[self.best]
    }
}

/// Runs `procedure(config, seed)` for every point and seed. The point with
/// the highest mean selection metric wins; ties go to the earliest point.
pub fn grid_search<F>(
    grid: &Grid,
    base: &TrainConfig,
    seeds: &[u64],
    selection: Selection,
    mut procedure: F,
) -> Result<SearchResult>
where
    F: FnMut(&TrainConfig, u64) -> Result<MetricsReport>,
{
    if seeds.is_empty() {
        return Err(Error::invalid("grid search needs at least one seed"));
    }
    let mut results = Vec::new();
    for point in grid.points(base)? {
        let runs = seeds
            .iter()
            .map(|&seed| {
                let cfg = TrainConfig { seed, ..point.config };
                Ok((seed, procedure(&cfg, seed)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let reports: Vec<MetricsReport> = runs.iter().map(|(_, r)| r.clone()).collect();
        let aggregate = aggregate_runs(&reports)?;
        log::info!("grid point {} {:?}: {:.4}", point.index, point.values, selection.score(&aggregate));
        results.push(PointResult { score: selection.score(&aggregate), point, runs, aggregate });
    }
    let best = (0..results.len()).fold(0, |b, i| if results[i].score > results[b].score { i } else { b });
    Ok(SearchResult { best, selection, results })
}

/// One row per (point, seed) and two aggregate rows (`mean`, `std`) per point.
pub fn write_results_csv<W: Write>(out: W, result: &SearchResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let axis_names: Vec<&str> =
        result.results.first().map_or(Vec::new(), |r| r.point.values.iter().map(|v| v.0).collect());
    let mut header = vec!["point"];
    header.extend(&axis_names);
    header.extend(["seed", "accuracy", "macro_f1", "top2_accuracy"]);
    w.write_record(&header)?;
    for r in &result.results {
        let lead = |w: &mut csv::Writer<W>, seed: &str, vals: [f64; 3]| {
            let mut rec = vec![r.point.index.to_string()];
            rec.extend(r.point.values.iter().map(|v| v.1.clone()));
            rec.push(seed.to_string());
            rec.extend(vals.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)
        };
        for (seed, rep) in &r.runs {
            lead(&mut w, &seed.to_string(), [rep.accuracy, rep.macro_f1, rep.top2_accuracy])?;
        }
        let a = &r.aggregate;
        lead(&mut w, "mean", [a.accuracy.mean, a.macro_f1.mean, a.top2_accuracy.mean])?;
        lead(&mut w, "std", [a.accuracy.std, a.macro_f1.std, a.top2_accuracy.std])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
