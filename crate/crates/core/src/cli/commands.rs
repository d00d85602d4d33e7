use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use clap::Args;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{usage, CliError, Common, DataArgs, Run, Settings, TrainArgs};
use crate::data::synthetic::{blob_count_dataset, BlobSceneConfig};
use crate::data::{
    apply_mask, classify_count, decode_image, load_dataset, preprocess, read_manifest, read_masks, split, DensityClass,
    Example, LoadOptions, SplitSpec, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::ingest::{parse_feed, poll_loop, FeedSource, FixtureFeed, HttpFeed, LoopConfig};
use crate::metrics::{aggregate_runs, MetricsReport};
use crate::nn::{
    evaluate_model, init_parameters, load_checkpoint, predict, save_checkpoint, save_history, train as train_model,
    ModelConfig, ModelParameters, TrainConfig,
};
use crate::sim::{
    compare_controllers, read_scenario, reference_scenario, render_compare, run_scenario, write_delay_csv,
};
use crate::sim::{ControlSettings, Scenario, ScenarioFile};
use crate::transfer::{evaluate_head, load_features, train_head as fit_head, FeatureSet, Head};
use crate::tuning::{grid_search, write_results_csv, Axis, Grid, Selection};

type CliResult = std::result::Result<(), CliError>;

fn title(class: DensityClass) -> &'static str {
    match class {
        DensityClass::Empty => "Empty",
        DensityClass::Low => "Low",
        DensityClass::Medium => "Medium",
        DensityClass::High => "High",
        DensityClass::TrafficJam => "Traffic Jam",
    }
}

fn write_rows<W: std::io::Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Poll the live endpoint.
    #[arg(long)]
    live: bool,
    /// Replay a recorded feed payload instead of the live endpoint.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Directory holding the fixture's images, named after the last URL segment.
    #[arg(long)]
    fixture_images: Option<PathBuf>,
    /// Feed base URL [env: TRAFFIC_FEED_BASE_URL].
    #[arg(long)]
    base_url: Option<String>,
    /// Only these camera ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    cameras: Option<Vec<String>>,
    /// Seconds between polls.
    #[arg(long)]
    interval: Option<f64>,
    /// Number of polls.
    #[arg(long)]
    ticks: Option<usize>,
    /// Consecutive failed polls tolerated.
    #[arg(long)]
    max_failures: Option<usize>,
    /// HTTP timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
}

fn fixture_source(payload: &Path, images: Option<&Path>) -> Result<FixtureFeed> {
    let text = std::fs::read_to_string(payload).map_err(|e| Error::io(payload, e))?;
    let (entries, _) = parse_feed(&text)?;
    let mut map = HashMap::new();
    if let Some(dir) = images {
        for e in entries {
            let name = e.image_url.split(['?', '#']).next().unwrap_or("").rsplit('/').next().unwrap_or("");
            let path = dir.join(name);
            if path.is_file() {
                map.insert(e.image_url.clone(), std::fs::read(&path).map_err(|err| Error::io(&path, err))?);
            }
        }
    }
    Ok(FixtureFeed::new(vec![text], map))
}

pub fn ingest(a: &IngestArgs, s: &mut Settings, run: &mut Run) -> CliResult {
    let live = s.flag("live", a.live)?;
    let fixture: Option<PathBuf> = s.pick_opt("fixture", a.fixture.clone())?;
    let fixture_images: Option<PathBuf> = s.pick_opt("fixture-images", a.fixture_images.clone())?;
    let base_url = HttpFeed::resolve_base_url(s.pick_opt("base-url", a.base_url.clone())?.as_deref());
    s.record_value("resolved-base-url", &base_url);
    let cameras: Option<Vec<String>> = s.pick_opt("cameras", a.cameras.clone())?;
    let interval = s.pick("interval", a.interval, 20.0)?;
    let ticks = s.pick("ticks", a.ticks, 1usize)?;
    let max_failures = s.pick("max-failures", a.max_failures, 5usize)?;
    let timeout = s.pick("timeout", a.timeout, 30.0)?;
    s.finish()?;
    if live == fixture.is_some() {
        return Err(usage("choose exactly one of --live and --fixture"));
    }
    if !(interval >= 0.0 && interval.is_finite()) || !(timeout > 0.0 && timeout.is_finite()) {
        return Err(usage("--interval and --timeout must be non-negative seconds"));
    }
    if ticks == 0 || max_failures == 0 {
        return Err(usage("--ticks and --max-failures must be at least 1"));
    }

    let mut source: Box<dyn FeedSource> = match &fixture {
        Some(p) => Box::new(fixture_source(p, fixture_images.as_deref())?),
        None => Box::new(HttpFeed::new(base_url, Duration::from_secs_f64(timeout))),
    };
    let cfg = LoopConfig {
        interval: Duration::from_secs_f64(interval),
        max_consecutive_failures: max_failures,
        max_ticks: Some(ticks),
    };
    std::fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    let summary = poll_loop(source.as_mut(), &run.out, cameras.as_deref(), &cfg, &AtomicBool::new(false))?;
    run.artifact(MANIFEST_FILE)?;
    let t = summary.totals;
    println!(
        "{} poll(s): fetched {}, skipped {}, failed {}, malformed {}, failed polls {}",
        summary.ticks, t.fetched, t.skipped, t.failed, t.malformed, summary.failed_polls
    );
    let row = vec![
        summary.ticks.to_string(),
        t.fetched.to_string(),
        t.skipped.to_string(),
        t.failed.to_string(),
        t.malformed.to_string(),
        summary.failed_polls.to_string(),
    ];
    run.table_csv("ingest.csv", |f| {
        write_rows(f, &["polls", "fetched", "skipped", "failed", "malformed", "failed_polls"], &[row])
    })?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset root holding labels.csv.
    #[arg(long)]
    data: Option<PathBuf>,
}

pub fn stats(a: &StatsArgs, s: &mut Settings, run: &mut Run) -> CliResult {
    let root: PathBuf = s.pick_opt("data", a.data.clone())?.ok_or_else(|| usage("--data is required"))?;
    s.finish()?;
    let (rows, mut problems) = read_manifest(&root.join(MANIFEST_FILE))?;
    let mut counts = [0u64; DensityClass::COUNT];
    let mut unlabeled = 0;
    for r in &rows {
        let class = match (r.label, r.car_count) {
            (None, None) => {
                unlabeled += 1;
                continue;
            }
            (Some(l), None) => l,
            (l, Some(c)) => {
                let derived = classify_count(c)?;
                if let Some(l) = l.filter(|&l| l != derived) {
                    problems.push(format!("{}: label {l} contradicts car_count {c}", r.image_id));
                    continue;
                }
                derived
            }
        };
        counts[class.index()] += 1;
    }
    for p in &problems {
        eprintln!("warning: {p}");
    }
    let total: u64 = counts.iter().sum();
    let mut table = String::new();
    let _ = writeln!(table, "| {:<11} | {:>7} | {:>7} |", "Class", "Count", "Share");
    let _ = writeln!(table, "|{}|{}|{}|", "-".repeat(13), "-".repeat(9), "-".repeat(9));
    let share = |n: u64| {
        if total == 0 {
            0.0
        } else {
            100.0 * n as f64 / total as f64
        }
    };
    for c in DensityClass::ALL {
        let n = counts[c.index()];
        let _ = writeln!(table, "| {:<11} | {:>7} | {:>6.1}% |", title(c), n, share(n));
    }
    let _ = writeln!(table, "| {:<11} | {:>7} | {:>6.1}% |", "Total", total, share(total));
    print!("{table}");
    if unlabeled > 0 || !problems.is_empty() {
        println!("{unlabeled} unlabeled, {} invalid row(s)", problems.len());
    }
    let csv_rows: Vec<Vec<String>> =
        DensityClass::ALL.iter().map(|&c| vec![c.name().to_string(), counts[c.index()].to_string()]).collect();
    run.table_csv("stats.csv", |f| write_rows(f, &["class", "count"], &csv_rows))?;
    Ok(())
}

/// Frames for `train`, `eval` and `tune`.
enum Frames {
    Dataset { root: PathBuf, mask: bool },
    Synthetic { per_class: usize },
}

fn resolve_frames(a: &DataArgs, s: &mut Settings) -> std::result::Result<Frames, CliError> {
    let data: Option<PathBuf> = s.pick_opt("data", a.data.clone())?;
    let synthetic: Option<usize> = s.pick_opt("synthetic", a.synthetic)?;
    let mask = s.flag("mask", a.mask)?;
    match (data, synthetic) {
        (Some(root), None) => Ok(Frames::Dataset { root, mask }),
        (None, Some(per_class)) if !mask => Ok(Frames::Synthetic { per_class }),
        (None, Some(_)) => Err(usage("--mask applies to --data only")),
        _ => Err(usage("give exactly one of --data and --synthetic")),
    }
}

fn load_frames(frames: &Frames, channels: usize, size: usize, seed: u64) -> Result<Vec<Example>> {
    match frames {
        Frames::Dataset { root, mask } => {
            let opts = LoadOptions { height: size, width: size, grayscale: channels == 1, apply_masks: *mask };
            let report = load_dataset(root, &opts)?;
            for e in &report.errors {
                eprintln!("error: {e}");
            }
            Ok(report.into_result()?.iter().map(|e| e.to_example()).collect())
        }
        Frames::Synthetic { per_class } => {
            if channels != 1 {
                return Err(Error::invalid("synthetic frames are single-channel"));
            }
            let scene = BlobSceneConfig { height: size, width: size, ..BlobSceneConfig::default() };
            blob_count_dataset([*per_class; 5], &scene, seed)
        }
    }
}

fn resolve_train(a: &TrainArgs, s: &mut Settings, seed: u64) -> std::result::Result<(TrainConfig, f64), CliError> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: s.pick("epochs", a.epochs, d.epochs)?,
        batch_size: s.pick("batch-size", a.batch_size, d.batch_size)?,
        learning_rate: s.pick("lr", a.lr, d.learning_rate)?,
        momentum: s.pick("momentum", a.momentum, d.momentum)?,
        augmentation: s.flag("augment", a.augment)?,
        class_weighting: s.flag("class-weighting", a.class_weighting)?,
        seed,
        ..d
    };
    let fraction = s.pick("train-fraction", a.train_fraction, 0.9)?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(usage(format!("--train-fraction {fraction} outside (0, 1)")));
    }
    Ok((cfg, fraction))
}

fn metrics_table(name: &str, report: &MetricsReport) -> Result<String> {
    let agg = aggregate_runs(std::slice::from_ref(report))?;
    let mut out = crate::metrics::render_table(&[(name.to_string(), agg)]);
    let _ = writeln!(out, "\n{:<12} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
    for (c, m) in DensityClass::ALL.iter().zip(&report.per_class) {
        let _ = writeln!(out, "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}", c.name(), m.precision, m.recall, m.f1, m.support);
    }
    let k = report.confusion.classes();
    let _ = writeln!(out, "\nconfusion (rows true, columns predicted)");
    for t in 0..k {
        let cells: Vec<String> = (0..k).map(|p| format!("{:>6}", report.confusion.get(t, p))).collect();
        let _ = writeln!(out, "{:<12} {}", DensityClass::from_index(t).map_or("?", |c| c.name()), cells.join(""));
    }
    Ok(out)
}

fn metrics_csv(run: &mut Run, name: &str, report: &MetricsReport) -> Result<()> {
    let mut rows: Vec<Vec<String>> = report
        .per_class
        .iter()
        .enumerate()
        .map(|(i, m)| {
            vec![
                DensityClass::from_index(i).map_or(i.to_string(), |c| c.name().to_string()),
                format!("{:.6}", m.precision),
                format!("{:.6}", m.recall),
                format!("{:.6}", m.f1),
                m.support.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "overall".into(),
        format!("accuracy={:.6}", report.accuracy),
        format!("top2={:.6}", report.top2_accuracy),
        format!("{:.6}", report.macro_f1),
        report.confusion.total().to_string(),
    ]);
    run.table_csv(name, |f| write_rows(f, &["class", "precision", "recall", "f1", "support"], &rows))
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Square input size in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Keep three colour channels instead of grayscale.
    #[arg(long)]
    color: bool,
}

pub fn train(a: &TrainCmd, s: &mut Settings, run: &mut Run) -> CliResult {
    let seed = run.seed.unwrap_or(0);
    let frames = resolve_frames(&a.data, s)?;
    let (cfg, fraction) = resolve_train(&a.train, s, seed)?;
    let size = s.pick("size", a.size, if matches!(frames, Frames::Synthetic { .. }) { 64 } else { 128 })?;
    let channels = if s.flag("color", a.color)? { 3 } else { 1 };
    s.finish()?;
    run.seeds = vec![seed];

    let examples = load_frames(&frames, channels, size, seed)?;
    let (train_set, validation) = split(examples, &SplitSpec { train_fraction: fraction, seed })?;
    let model = ModelConfig::basic_cnn(channels, size, size, DensityClass::COUNT);
    let start = Instant::now();
    let outcome = train_model(&model, init_parameters(&model, seed)?, &train_set, &validation, &cfg)?;
    let elapsed = start.elapsed();
    save_checkpoint(&run.artifact("model.ckpt")?, &model, &outcome.params)?;
    save_history(&run.artifact("history.csv")?, &outcome.history)?;
    if let Some(epoch) = outcome.diverged_at {
        return Err(Error::Diverged { epoch }.into());
    }
    let report = evaluate_model(&model, &outcome.params, &validation)?;
    println!(
        "{} training / {} validation frames, {} epochs in {:.1} s",
        train_set.len(),
        validation.len(),
        outcome.history.len(),
        elapsed.as_secs_f64()
    );
    print!("{}", metrics_table("Basic CNN", &report)?);
    metrics_csv(run, "metrics.csv", &report)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    #[command(flatten)]
    pub common: Common,
    /// Feature file for training.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Separate validation feature file; otherwise a seeded split.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
}

fn shuffled(set: &FeatureSet, seed: u64) -> FeatureSet {
    let mut rows = set.rows.clone();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    FeatureSet { feature_dim: set.feature_dim, rows }
}

fn head_sets(features: &Path, validation: Option<&Path>, fraction: f64, seed: u64) -> Result<(FeatureSet, FeatureSet)> {
    let set = load_features(features)?;
    match validation {
        Some(v) => Ok((set, load_features(v)?)),
        None => Ok(shuffled(&set, seed).split(fraction)),
    }
}

pub fn train_head(a: &TrainHeadArgs, s: &mut Settings, run: &mut Run) -> CliResult {
    let seed = run.seed.unwrap_or(0);
    let features: PathBuf =
        s.pick_opt("features", a.features.clone())?.ok_or_else(|| usage("--features is required"))?;
    let validation: Option<PathBuf> = s.pick_opt("validation", a.validation.clone())?;
    let (cfg, fraction) = resolve_train(&a.train, s, seed)?;
    s.finish()?;
    if cfg.augmentation {
        return Err(usage("--augment does not apply to feature vectors"));
    }
    run.seeds = vec![seed];

    let (train_set, val_set) = head_sets(&features, validation.as_deref(), fraction, seed)?;
    let start = Instant::now();
    let trained = fit_head(&train_set, &val_set, DensityClass::COUNT, &cfg)?;
    let elapsed = start.elapsed();
    save_checkpoint(&run.artifact("head.ckpt")?, &trained.head.config, &trained.head.params)?;
    save_history(&run.artifact("history.csv")?, &trained.outcome.history)?;
    if let Some(epoch) = trained.outcome.diverged_at {
        return Err(Error::Diverged { epoch }.into());
    }
    println!(
        "{} training / {} validation rows, {} features, {:.2} s",
        train_set.len(),
        val_set.len(),
        train_set.feature_dim,
        elapsed.as_secs_f64()
    );
    if !val_set.is_empty() {
        let report = evaluate_head(&trained.head, &val_set)?;
        print!("{}", metrics_table("Transfer head", &report)?);
        metrics_csv(run, "metrics.csv", &report)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint written by `train` or `train-head`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Feature file, for head checkpoints.
    #[arg(long)]
    features: Option<PathBuf>,
}

fn is_head(config: &ModelConfig) -> bool {
    config.input_shape[1] == 1 && config.input_shape[2] == 1
}

pub fn eval(a: &EvalArgs, s: &mut Settings, run: &mut Run) -> CliResult {
    let seed = run.seed.unwrap_or(0);
    let model: PathBuf = s.pick_opt("model", a.model.clone())?.ok_or_else(|| usage("--model is required"))?;
    let features: Option<PathBuf> = s.pick_opt("features", a.features.clone())?;
    let frames = if features.is_some() { None } else { Some(resolve_frames(&a.data, s)?) };
    s.finish()?;
    run.seeds = vec![seed];

    let (config, params) = load_checkpoint(&model)?;
    let report = match (&features, &frames) {
        (Some(f), _) => {
            if !is_head(&config) {
                return Err(usage("--features needs a head checkpoint"));
            }
            evaluate_head(&Head { config, params }, &load_features(f)?)?
        }
        (None, Some(frames)) => {
            let [c, h, w] = config.input_shape;
            if h != w {
                return Err(Error::invalid(format!("model input {h}×{w} is not square")).into());
            }
            let examples = load_frames(frames, c, h, seed)?;
            evaluate_model(&config, &params, &examples)?
        }
        (None, None) => unreachable!("frames resolved when no features are given"),
    };
    print!("{}", metrics_table(&model.display().to_string(), &report)?);
    metrics_csv(run, "eval.csv", &report)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Tune a transfer head on this feature file instead of the CNN.
    #[arg(long)]
    features: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
    /// Grid axis such as `lr=0.1,0.01`; repeat for more axes.
    #[arg(long = "axis")]
    axes: Vec<String>,
    /// Largest grid size accepted.
    #[arg(long)]
    cap: Option<usize>,
    /// Seeded runs per grid point.
    #[arg(long)]
    runs: Option<usize>,
    /// Metric that picks the winner: accuracy, macro-f1 or top2.
    #[arg(long)]
    select: Option<String>,
    #[arg(long)]
    size: Option<usize>,
}

fn parse_selection(s: &str) -> std::result::Result<Selection, CliError> {
    match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
        "accuracy" | "acc" => Ok(Selection::Accuracy),
        "macrof1" | "f1" => Ok(Selection::MacroF1),
        "top2" => Ok(Selection::Top2),
        other => Err(usage(format!("unknown selection metric {other:?} (accuracy, macro-f1, top2)"))),
    }
}

pub fn tune(a: &TuneArgs, s: &mut Settings, run: &mut Run) -> CliResult {
    let seed = run.seed.unwrap_or(0);
    let features: Option<PathBuf> = s.pick_opt("features", a.features.clone())?;
    let frames = if features.is_some() { None } else { Some(resolve_frames(&a.data, s)?) };
    let (base, fraction) = resolve_train(&a.train, s, seed)?;
    let axes: Vec<String> = s.pick("axis", (!a.axes.is_empty()).then(|| a.axes.clone()), Vec::new())?;
    let cap = s.pick("cap", a.cap, 64usize)?;
    let runs = s.pick("runs", a.runs, 3usize)?;
    let selection = parse_selection(&s.pick("select", a.select.clone(), "accuracy".to_string())?)?;
    let size = s.pick("size", a.size, 64usize)?;
    s.finish()?;
    if axes.is_empty() {
        return Err(usage("give at least one --axis"));
    }
    if runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let grid = Grid::new(
        axes.iter().map(|x| Axis::parse(x)).collect::<Result<Vec<_>>>().map_err(|e| usage(e.to_string()))?,
        cap,
    );
    grid.validate().map_err(|e| usage(e.to_string()))?;
    let seeds: Vec<u64> = (0..runs as u64).map(|i| seed + i).collect();
    run.seeds = seeds.clone();

    let result = match (&features, &frames) {
        (Some(f), _) => {
            let set = load_features(f)?;
            grid_search(&grid, &base, &seeds, selection, |cfg, seed| {
                let (tr, va) = shuffled(&set, seed).split(fraction);
                evaluate_head(&fit_head(&tr, &va, DensityClass::COUNT, cfg)?.head, &va)
            })?
        }
        (None, Some(frames)) => {
            let examples = load_frames(frames, 1, size, seed)?;
            let model = ModelConfig::basic_cnn(1, size, size, DensityClass::COUNT);
            grid_search(&grid, &base, &seeds, selection, |cfg, seed| {
                let (tr, va) = split(examples.clone(), &SplitSpec { train_fraction: fraction, seed })?;
                let out = train_model(&model, init_parameters(&model, seed)?, &tr, &va, cfg)?;
                evaluate_model(&model, &out.params, &va)
            })?
        }
        (None, None) => unreachable!("frames resolved when no features are given"),
    };

    let rows: Vec<(String, _)> = result
        .results
        .iter()
        .map(|r| {
            let label = r.point.values.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
            let mark = if r.point.index == result.best_point().point.index { " *" } else { "" };
            (format!("{label}{mark}"), r.aggregate)
        })
        .collect();
    print!("{}", crate::metrics::render_table(&rows));
    println!("best (by {:?}): point {}", selection, result.best_point().point.index);
    let path = run.artifact("tune.csv")?;
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_results_csv(file, &result)?;
    Ok(())
}

fn masked_input(
    image: &Path,
    masks: Option<&Path>,
    camera: Option<&str>,
    c: usize,
    h: usize,
    w: usize,
) -> Result<crate::tensor::Tensor> {
    let raw = decode_image(image)?;
    let mut t = preprocess(&raw, h, w, c == 1)?;
    if let Some(masks) = masks {
        let camera = camera.ok_or_else(|| Error::invalid("--masks needs --camera"))?;
        let mask = read_masks(masks)?
            .into_iter()
            .find(|m| m.camera_id == camera)
            .ok_or_else(|| Error::invalid(format!("no mask for camera {camera}")))?;
        let scaled = mask.scaled(w as f64 / raw.width() as f64, h as f64 / raw.height() as f64);
        t = apply_mask(&t, &scaled)?;
    }
    Ok(t)
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    /// Image to classify.
    image: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// masks.json to apply before predicting.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    camera: Option<String>,
}

pub fn infer(a: &InferArgs, s: &mut Settings, run: &mut Run) -> CliResult {
    let model: PathBuf = s.pick_opt("model", a.model.clone())?.ok_or_else(|| usage("--model is required"))?;
    let masks: Option<PathBuf> = s.pick_opt("masks", a.masks.clone())?;
    let camera: Option<String> = s.pick_opt("camera", a.camera.clone())?;
    s.record_value("image", &a.image);
    s.finish()?;
    run.seeds = run.seed.into_iter().collect();

    let (config, params): (ModelConfig, ModelParameters) = load_checkpoint(&model)?;
    if is_head(&config) {
        return Err(usage("infer needs an image model, not a feature head"));
    }
    let [c, h, w] = config.input_shape;
    let input = masked_input(&a.image, masks.as_deref(), camera.as_deref(), c, h, w)?;
    let start = Instant::now();
    let probs = predict(&config, &params, &input)?;
    let latency = start.elapsed();
    let best = probs.argmax();
    let name = |i: usize| DensityClass::from_index(i).map_or(i.to_string(), |c| c.name().to_string());
    println!("class: {}", name(best));
    for (i, p) in probs.data().iter().enumerate() {
        println!("  {:<12} {:.4}", name(i), p);
    }
    println!("latency: {:.2} ms", latency.as_secs_f64() * 1e3);
    let rows: Vec<Vec<String>> =
        probs.data().iter().enumerate().map(|(i, p)| vec![name(i), format!("{p:.6}")]).collect();
    run.table_csv("infer.csv", |f| write_rows(f, &["class", "probability"], &rows))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct MaskPreviewArgs {
    #[command(flatten)]
    pub common: Common,
    /// Camera frame to mask.
    image: PathBuf,
    /// masks.json holding the camera's polygon.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    camera: Option<String>,
    /// Resize to this square size first.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    grayscale: bool,
}

pub fn mask_preview(a: &MaskPreviewArgs, s: &mut Settings, run: &mut Run) -> CliResult {
    let masks: PathBuf = s.pick_opt("masks", a.masks.clone())?.ok_or_else(|| usage("--masks is required"))?;
    let camera: String = s.pick_opt("camera", a.camera.clone())?.ok_or_else(|| usage("--camera is required"))?;
    let size: Option<usize> = s.pick_opt("size", a.size)?;
    let grayscale = s.flag("grayscale", a.grayscale)?;
    s.record_value("image", &a.image);
    s.finish()?;
    run.seeds = run.seed.into_iter().collect();

    let (w0, h0) = image::image_dimensions(&a.image).map_err(Error::from)?;
    let (h, w) = size.map_or((h0 as usize, w0 as usize), |n| (n, n));
    let c = if grayscale { 1 } else { 3 };
    let t = masked_input(&a.image, Some(&masks), Some(&camera), c, h, w)?;
    let plane = h * w;
    let px = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let d = t.data();
    let stem = a.image.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
    let path = run.artifact(&format!("{stem}_masked.png"))?;
    if c == 1 {
        image::GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([px(d[y as usize * w + x as usize])]))
            .save(&path)
            .map_err(Error::from)?;
    } else {
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = y as usize * w + x as usize;
            image::Rgb([px(d[i]), px(d[plane + i]), px(d[2 * plane + i])])
        })
        .save(&path)
        .map_err(Error::from)?;
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn load_scenario(s: &mut Settings, flag: Option<PathBuf>) -> std::result::Result<ScenarioFile, CliError> {
    match s.pick_opt::<PathBuf>("scenario", flag)? {
        Some(p) => Ok(read_scenario(&p)?),
        None => Ok(ScenarioFile { scenario: reference_scenario(), control: ControlSettings::default() }),
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scenario file; the built-in reference junction if omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// fixed, lqf, density, ga or qlearning.
    #[arg(long)]
    controller: Option<String>,
}

fn per_lane_table(scenario: &Scenario, stats: &crate::sim::DelayStats) -> String {
    let mut out = format!(
        "{:<5} {:<9} {:>9} {:>11} {:>7} {:>11} {:>10} {:>8}\n",
        "lane", "approach", "arrivals", "departures", "queued", "mean delay", "max delay", "max red"
    );
    for (i, (lane, l)) in scenario.lanes.iter().zip(&stats.per_lane).enumerate() {
        let _ = writeln!(
            out,
            "{:<5} {:<9} {:>9} {:>11} {:>7} {:>11.2} {:>10.0} {:>8}",
            i, lane.approach, l.arrivals, l.departures, l.still_queued, l.mean_delay, l.max_delay, l.max_red
        );
    }
    out
}

pub fn simulate(a: &SimulateArgs, s: &mut Settings, run: &mut Run) -> CliResult {
    let file = load_scenario(s, a.scenario.clone())?;
    let name = s.pick("controller", a.controller.clone(), "lqf".to_string())?;
    s.finish()?;
    let scenario = file.scenario.with_seed(run.seed.unwrap_or(file.scenario.seed));
    run.seeds = vec![scenario.seed];
    let controller = file.control.build(&name, &scenario).map_err(|e| usage(e.to_string()))?;
    let stats = run_scenario(&scenario, &controller)?;
    println!(
        "{} on seed {}: mean delay {:.2} s, max delay {:.0} s, throughput {}/{}, still queued {}",
        controller.name(),
        scenario.seed,
        stats.mean_delay,
        stats.max_delay,
        stats.throughput,
        stats.arrivals,
        stats.still_queued
    );
    print!("{}", per_lane_table(&scenario, &stats));
    let runs = vec![(controller.name().to_string(), scenario.seed, stats)];
    run.table_csv("delays.csv", |f| write_delay_csv(f, &runs))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Number of arrival seeds, counting up from --seed (default the scenario's).
    #[arg(long)]
    seeds: Option<usize>,
}

pub fn compare(a: &CompareArgs, s: &mut Settings, run: &mut Run) -> CliResult {
    let file = load_scenario(s, a.scenario.clone())?;
    let count = s.pick("seeds", a.seeds, 10usize)?;
    s.finish()?;
    if count == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let base = run.seed.unwrap_or(file.scenario.seed);
    let seeds: Vec<u64> = (0..count as u64).map(|i| base + i).collect();
    run.seeds = seeds.clone();
    let rows = compare_controllers(&file.scenario, &file.control, &seeds)?;
    print!("{}", render_compare(&rows));

    let baseline = rows.iter().find(|r| r.controller == "FixedTime").cloned();
    let summary: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.controller.clone(),
                format!("{:.4}", r.mean_delay.mean),
                format!("{:.4}", r.mean_delay.std),
                format!("{:.0}", r.max_delay),
                format!("{:.2}", r.throughput),
                baseline.as_ref().map_or(String::new(), |b| format!("{:.2}", r.reduction_vs(b))),
            ]
        })
        .collect();
    run.table_csv("compare.csv", |f| {
        write_rows(f, &["controller", "mean_delay", "std", "max_delay", "throughput", "reduction_pct"], &summary)
    })?;
    let runs: Vec<(String, u64, crate::sim::DelayStats)> =
        rows.iter().flat_map(|r| r.runs.iter().map(|(seed, st)| (r.controller.clone(), *seed, st.clone()))).collect();
    run.table_csv("delays.csv", |f| write_delay_csv(f, &runs))?;
    Ok(())
}
