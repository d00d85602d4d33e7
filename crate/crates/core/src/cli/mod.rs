//! Command-line front end. `dispatch` parses arguments, resolves settings
//! (flags over config file over defaults), runs one subcommand and writes a
//! run manifest into the output directory.

mod commands;
mod settings;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
pub use settings::Settings;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub(crate) fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Record of one invocation: enough to rerun it with `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Map<String, serde_json::Value>,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
    pub duration_secs: f64,
    /// `ok`, or the error that ended the run.
    pub status: String,
    pub version: String,
}

impl RunManifest {
    pub fn read(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "traffic-density", version, about = "Traffic density estimation and junction signal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub(crate) struct Common {
    /// Seed for every random draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for artifacts and the run manifest [default: runs/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write printed tables as CSV into the output directory.
    #[arg(long)]
    csv: bool,
    /// TOML config file, or a previous run manifest. Flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Where labeled frames come from.
#[derive(Debug, Clone, Args)]
pub(crate) struct DataArgs {
    /// Dataset root holding labels.csv and images/.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate blob-count frames instead, this many per class.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Apply the per-camera polygons from masks.json.
    #[arg(long)]
    mask: bool,
}

#[derive(Debug, Clone, Args)]
pub(crate) struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Random flips, shifts and brightness changes while training.
    #[arg(long)]
    augment: bool,
    /// Weight the loss by inverse class frequency.
    #[arg(long)]
    class_weighting: bool,
    /// Fraction of examples used for training; the rest validate.
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Poll the traffic-camera feed into a dataset directory (the output directory).
    Ingest(commands::IngestArgs),
    /// Class histogram of a dataset manifest.
    Stats(commands::StatsArgs),
    /// Train the basic CNN.
    Train(commands::TrainCmd),
    /// Train a softmax head on precomputed features.
    TrainHead(commands::TrainHeadArgs),
    /// Evaluate a checkpoint.
    Eval(commands::EvalArgs),
    /// Grid search over training hyperparameters.
    Tune(commands::TuneArgs),
    /// Classify one image.
    Infer(commands::InferArgs),
    /// Write an image with a camera's mask applied.
    MaskPreview(commands::MaskPreviewArgs),
    /// Run one signal controller on a scenario.
    Simulate(commands::SimulateArgs),
    /// Benchmark every signal controller on a scenario.
    Compare(commands::CompareArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Stats(_) => "stats",
            Command::Train(_) => "train",
            Command::TrainHead(_) => "train-head",
            Command::Eval(_) => "eval",
            Command::Tune(_) => "tune",
            Command::Infer(_) => "infer",
            Command::MaskPreview(_) => "mask-preview",
            Command::Simulate(_) => "simulate",
            Command::Compare(_) => "compare",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Ingest(a) => &a.common,
            Command::Stats(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::TrainHead(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Tune(a) => &a.common,
            Command::Infer(a) => &a.common,
            Command::MaskPreview(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Compare(a) => &a.common,
        }
    }
}

/// State of the run handed to each subcommand.
pub(crate) struct Run {
    pub out: PathBuf,
    pub csv: bool,
    pub seed: Option<u64>,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<PathBuf>,
}

impl Run {
    /// Path of an artifact inside the output directory, recorded in the manifest.
    pub fn artifact(&mut self, name: &str) -> crate::Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join(name);
        if !self.artifacts.contains(&path) {
            self.artifacts.push(path.clone());
        }
        Ok(path)
    }

    /// Writes `csv` to `name` when `--csv` was given.
    pub fn table_csv(
        &mut self,
        name: &str,
        write: impl FnOnce(std::fs::File) -> crate::Result<()>,
    ) -> crate::Result<()> {
        if !self.csv {
            return Ok(());
        }
        let path = self.artifact(name)?;
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write(file)
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on a usage error, 2 when the command itself fails.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run with --help for usage");
            }
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let name = command.name();
    let common = command.common().clone();
    let mut settings = Settings::load(common.config.as_deref(), name)?;
    let seed = settings.pick_opt("seed", common.seed)?;
    let out = settings.pick("out", common.out.clone(), Path::new("runs").join(name))?;
    let csv = settings.flag("csv", common.csv)?;
    let mut run = Run { out, csv, seed, seeds: Vec::new(), artifacts: Vec::new() };

    let start = Instant::now();
    let result = match &command {
        Command::Ingest(a) => commands::ingest(a, &mut settings, &mut run),
        Command::Stats(a) => commands::stats(a, &mut settings, &mut run),
        Command::Train(a) => commands::train(a, &mut settings, &mut run),
        Command::TrainHead(a) => commands::train_head(a, &mut settings, &mut run),
        Command::Eval(a) => commands::eval(a, &mut settings, &mut run),
        Command::Tune(a) => commands::tune(a, &mut settings, &mut run),
        Command::Infer(a) => commands::infer(a, &mut settings, &mut run),
        Command::MaskPreview(a) => commands::mask_preview(a, &mut settings, &mut run),
        Command::Simulate(a) => commands::simulate(a, &mut settings, &mut run),
        Command::Compare(a) => commands::compare(a, &mut settings, &mut run),
    };
    if let Err(CliError::Usage(_)) = result {
        return result;
    }
    let manifest = RunManifest {
        command: name.to_string(),
        config: settings.resolved().clone(),
        seeds: run.seeds.clone(),
        artifacts: run.artifacts.clone(),
        duration_secs: start.elapsed().as_secs_f64(),
        status: match &result {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        },
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let path = run.artifact(RUN_MANIFEST_FILE)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    result
}
